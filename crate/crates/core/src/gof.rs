//! Goodness-of-fit diagnostics: Pearson chi-square on marginal and joint
//! bins, a Kolmogorov-Smirnov uniformity test, and 2-D kernel density
//! grids.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::converter::{FittedModel, TAIL_SD};
use crate::error::{Error, Result};
use crate::numerics::{integrate, integrate_with_breaks, QuadratureSpec};
use crate::phase_type::cph_cdf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinMode {
    Equiprobable,
    EqualWidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BinningSpec {
    pub mode: BinMode,
    /// Bins per dimension.
    pub bins: usize,
    /// Adjacent bins are pooled until every expected count reaches this.
    pub min_expected: f64,
}

impl Default for BinningSpec {
    fn default() -> Self {
        BinningSpec {
            mode: BinMode::Equiprobable,
            bins: 10,
            min_expected: 5.0,
        }
    }
}

impl BinningSpec {
    /// Default for joint tests: 5 bins per dimension.
    pub fn joint() -> Self {
        BinningSpec {
            bins: 5,
            ..BinningSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::validation("binning.bins", "must be >= 2"));
        }
        if !(self.min_expected >= 1.0) {
            return Err(Error::validation("binning.min_expected", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GofReport {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub observed: Vec<f64>,
    pub expected: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Distribution tails

const GAMMA_EPS: f64 = 1e-16;

/// Upper regularized incomplete gamma `Q(a, x)`.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if !(a > 0.0) || x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    let log_prefix = -x + a * x.ln() - libm::lgamma(a);
    if x < a + 1.0 {
        // Series for P(a, x).
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * GAMMA_EPS {
                break;
            }
        }
        1.0 - sum * log_prefix.exp()
    } else {
        // Modified Lentz continued fraction for Q(a, x).
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < GAMMA_EPS {
                break;
            }
        }
        log_prefix.exp() * h
    }
}

/// Upper tail of the chi-square distribution.
pub fn chi2_sf(statistic: f64, df: usize) -> f64 {
    regularized_gamma_q(df as f64 / 2.0, statistic / 2.0)
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Theta-function form converges fast for small arguments.
        let mut s = 0.0;
        for k in 1..=50 {
            let m = (2 * k - 1) as f64;
            s += (-m * m * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < 1e-20 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test of `samples` against Uniform(0, 1), with Stephens'
/// small-sample correction.
pub fn ks_uniform(samples: &[f64]) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::validation("samples", "need at least one value"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let u = u.clamp(0.0, 1.0);
            ((i as f64 + 1.0) / n - u).max(u - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let root = n.sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf((root + 0.12 + 0.11 / root) * d),
    })
}

// ---------------------------------------------------------------------------
// One-dimensional bins

/// Bins on the real line given by interior edges; the outer bins are open
/// ended. `probs` are the model probabilities, summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bins {
    pub edges: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Root of the nondecreasing `g` on `[lo, hi]` by the Illinois variant of
/// regula falsi.
fn invert_cdf<G: Fn(f64) -> Result<f64>>(g: G, lo: f64, hi: f64) -> Result<f64> {
    let (mut xa, mut xb) = (lo, hi);
    let (mut ga, mut gb) = (g(xa)?, g(xb)?);
    if ga >= 0.0 {
        return Ok(xa);
    }
    if gb <= 0.0 {
        return Ok(xb);
    }
    let mut side = 0i8;
    let mut x = xa;
    for _ in 0..200 {
        x = (xa * gb - xb * ga) / (gb - ga);
        if !(x > xa && x < xb) {
            x = 0.5 * (xa + xb);
        }
        let gx = g(x)?;
        if gx.abs() <= 1e-12 || xb - xa <= 1e-13 * xb.abs().max(1.0) {
            break;
        }
        if gx < 0.0 {
            xa = x;
            ga = gx;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            xb = x;
            gb = gx;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    Ok(x)
}

impl Bins {
    /// Bins for a model given by its CDF on the support `[lo, hi]`.
    pub fn from_cdf<F: Fn(f64) -> Result<f64>>(cdf: F, lo: f64, hi: f64, spec: &BinningSpec) -> Result<Bins> {
        spec.validate()?;
        if !(hi > lo) {
            return Err(Error::domain("bins", format!("empty support [{lo}, {hi}]")));
        }
        let f_lo = cdf(lo)?;
        let total = cdf(hi)? - f_lo;
        if !(total > 0.0) {
            return Err(Error::domain("bins", "model puts no mass on the support"));
        }
        let k = spec.bins;
        let edges: Vec<f64> = match spec.mode {
            BinMode::EqualWidth => (1..k).map(|j| lo + (hi - lo) * j as f64 / k as f64).collect(),
            BinMode::Equiprobable => {
                let mut edges = Vec::with_capacity(k - 1);
                let mut a = lo;
                for j in 1..k {
                    let target = j as f64 / k as f64;
                    a = invert_cdf(|x| Ok((cdf(x)? - f_lo) / total - target), a, hi)?;
                    edges.push(a);
                }
                edges
            }
        };
        let mut cum = Vec::with_capacity(k + 1);
        cum.push(0.0);
        for &e in &edges {
            cum.push(((cdf(e)? - f_lo) / total).clamp(0.0, 1.0));
        }
        cum.push(1.0);
        let probs = cum.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
        Ok(Bins { edges, probs })
    }

    /// Bins for a model given by its density on `[lo, hi]`; the CDF is
    /// obtained by quadrature.
    pub fn from_pdf<F: Fn(f64) -> f64>(pdf: F, lo: f64, hi: f64, spec: &BinningSpec) -> Result<Bins> {
        let q = QuadratureSpec::relative(1e-10);
        Bins::from_cdf(|x| integrate(&pdf, lo, x, &q), lo, hi, spec)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    #[inline]
    pub fn index(&self, x: f64) -> usize {
        self.edges.partition_point(|&e| e <= x)
    }
}

/// Merges adjacent cells until each expected count reaches `min_expected`.
fn pool(observed: &[f64], expected: &[f64], min_expected: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= min_expected {
            obs.push(o_acc);
            exp.push(e_acc);
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match (obs.last_mut(), exp.last_mut()) {
            (Some(o), Some(e)) => {
                *o += o_acc;
                *e += e_acc;
            }
            _ => {
                obs.push(o_acc);
                exp.push(e_acc);
            }
        }
    }
    if obs.len() < 2 {
        return Err(Error::Pooling { bins: obs.len() });
    }
    Ok((obs, exp))
}

/// Pearson chi-square from raw cell counts and model cell probabilities.
pub fn pearson(observed: &[f64], probs: &[f64], min_expected: f64) -> Result<GofReport> {
    let n: f64 = observed.iter().sum();
    let mass: f64 = probs.iter().sum();
    let expected: Vec<f64> = probs.iter().map(|p| n * p / mass).collect();
    let (obs, exp) = pool(observed, &expected, min_expected)?;
    let statistic = obs
        .iter()
        .zip(&exp)
        .map(|(o, e)| if *e > 0.0 { (o - e) * (o - e) / e } else { 0.0 })
        .sum::<f64>();
    let df = obs.len() - 1;
    Ok(GofReport {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
        observed: obs,
        expected: exp,
    })
}

/// Chi-square of `data` against precomputed bins.
pub fn chi2_binned(data: &[f64], bins: &Bins, min_expected: f64) -> Result<GofReport> {
    let mut counts = vec![0.0; bins.len()];
    for &x in data {
        counts[bins.index(x)] += 1.0;
    }
    pearson(&counts, &bins.probs, min_expected)
}

fn check_size(n: usize, cells: usize) -> Result<()> {
    if n < 5 * cells {
        return Err(Error::validation(
            "data",
            format!("{n} observations is fewer than 5 per bin for {cells} bins"),
        ));
    }
    Ok(())
}

/// Chi-square of `data` against the density `model_pdf` supported on
/// `support`.
pub fn chi2_marginal<F: Fn(f64) -> f64>(
    data: &[f64],
    model_pdf: F,
    support: (f64, f64),
    spec: &BinningSpec,
) -> Result<GofReport> {
    spec.validate()?;
    check_size(data.len(), spec.bins)?;
    let bins = Bins::from_pdf(model_pdf, support.0, support.1, spec)?;
    chi2_binned(data, &bins, spec.min_expected)
}

/// LOS bins for a fitted model, from its phase-type CDF on `[0, horizon]`.
pub fn los_bins(m: &FittedModel, spec: &BinningSpec) -> Result<Bins> {
    Bins::from_cdf(|t| Ok(cph_cdf(m.params(), t)), 0.0, m.horizon(), spec)
}

fn outer_spec() -> QuadratureSpec {
    QuadratureSpec {
        rel_tol: 1e-8,
        abs_tol: 1e-300,
        max_subdivisions: 400,
    }
}

/// Range of `ln Y` carrying the model's mass.
fn log_charge_support(m: &FittedModel) -> (f64, f64) {
    let lp = m.lognormal();
    let top = if m.n() > 1 {
        m.curves().start(m.n() - 1).max(0.0)
    } else {
        0.0
    };
    (
        lp.mu - TAIL_SD * lp.sigma,
        lp.mu + lp.sigma * (top + TAIL_SD) + m.horizon(),
    )
}

/// Times in `(a, b)` where the level `ln y = v` crosses a partition curve
/// or an initial cut point, where `los_density_below(·, v)` has kinks.
/// Returned with `a` and `b` as a sorted break list.
fn level_breaks(m: &FittedModel, v: f64, a: f64, b: f64) -> Vec<f64> {
    let lp = m.lognormal();
    let curves = m.curves();
    let level = |t: f64| (v - t - lp.mu) / lp.sigma;
    let mut pts = vec![a, b];
    for k in 1..m.n() {
        pts.push(v - lp.mu - lp.sigma * curves.start(k));
        let gap = |t: f64| level(t) - curves.z(k, t);
        let mut grid: Vec<f64> = curves.nodes(k).map(|(t, _)| t).filter(|&t| t > a && t < b).collect();
        grid.insert(0, a);
        grid.push(b);
        for w in grid.windows(2) {
            let (mut lo, mut hi) = (w[0], w[1]);
            let (g_lo, g_hi) = (gap(lo), gap(hi));
            if g_lo == 0.0 {
                pts.push(lo);
                continue;
            }
            if g_lo.signum() == g_hi.signum() {
                continue;
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if gap(mid).signum() == g_lo.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            pts.push(0.5 * (lo + hi));
        }
    }
    pts.retain(|&t| t >= a && t <= b);
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * y.abs().max(1.0));
    pts
}

fn mass_below(m: &FittedModel, v: f64, a: f64, b: f64) -> Result<f64> {
    integrate_with_breaks(
        |t| m.los_density_below(t, v).unwrap_or(f64::NAN),
        &level_breaks(m, v, a, b),
        &outer_spec(),
    )
}

/// `P(ln Y <= v, T <= horizon)` under the model.
pub fn log_charge_cdf(m: &FittedModel, v: f64) -> Result<f64> {
    mass_below(m, v, 0.0, m.horizon())
}

/// Log-charge bins for a fitted model.
pub fn log_charge_bins(m: &FittedModel, spec: &BinningSpec) -> Result<Bins> {
    let (lo, hi) = log_charge_support(m);
    Bins::from_cdf(|v| log_charge_cdf(m, v), lo, hi, spec)
}

/// Product binning of (LOS, log-charge) with model cell probabilities,
/// stored LOS-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointBins {
    pub los: Bins,
    pub log_charge: Bins,
    pub probs: Vec<f64>,
}

impl JointBins {
    pub fn cell(&self, charge: f64, los: f64) -> usize {
        self.los.index(los) * self.log_charge.len() + self.log_charge.index(charge.ln())
    }
}

/// Per-dimension bins from the model marginals, cell masses by 2-D
/// quadrature of the joint density, normalized to sum to 1.
pub fn joint_bins(m: &FittedModel, spec: &BinningSpec) -> Result<JointBins> {
    spec.validate()?;
    let los = los_bins(m, spec)?;
    let log_charge = log_charge_bins(m, spec)?;
    let mut t_edges = vec![0.0];
    t_edges.extend(&los.edges);
    t_edges.push(m.horizon());
    let kv = log_charge.len();
    let (_, v_top) = log_charge_support(m);
    let mut v_edges = log_charge.edges.clone();
    v_edges.push(v_top);
    let rows: Vec<Vec<f64>> = t_edges
        .par_windows(2)
        .map(|w| {
            let mut below = Vec::with_capacity(kv);
            for &v in &v_edges {
                let mass = mass_below(m, v, w[0], w[1]).map_err(|e| match e {
                    Error::Quadrature { .. } => Error::Domain {
                        op: "chi2_joint",
                        reason: format!("cell quadrature failed for t in [{}, {}], ln y <= {v}: {e}", w[0], w[1]),
                    },
                    e => e,
                })?;
                below.push(mass);
            }
            let mut prev = 0.0;
            Ok(below
                .into_iter()
                .map(|b| {
                    let cell = (b - prev).max(0.0);
                    prev = b;
                    cell
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut probs: Vec<f64> = rows.into_iter().flatten().collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(JointBins { los, log_charge, probs })
}

/// Chi-square of `(charge, los)` pairs against precomputed joint bins.
pub fn chi2_joint_binned(data: &[(f64, f64)], bins: &JointBins, min_expected: f64) -> Result<GofReport> {
    let mut counts = vec![0.0; bins.probs.len()];
    for &(y, t) in data {
        counts[bins.cell(y, t)] += 1.0;
    }
    pearson(&counts, &bins.probs, min_expected)
}

pub fn chi2_joint(data: &[(f64, f64)], m: &FittedModel, spec: &BinningSpec) -> Result<GofReport> {
    spec.validate()?;
    check_size(data.len(), spec.bins * spec.bins)?;
    let bins = joint_bins(m, spec)?;
    chi2_joint_binned(data, &bins, spec.min_expected)
}

// ---------------------------------------------------------------------------
// Density grids

/// Values on the product grid `xs × ys`, stored `x`-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

impl DensityGrid {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ys.len() + j]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Trapezoid integral over the grid.
    pub fn trapezoid(&self) -> f64 {
        let w = |v: &[f64], i: usize| {
            let left = if i > 0 { v[i] - v[i - 1] } else { 0.0 };
            let right = if i + 1 < v.len() { v[i + 1] - v[i] } else { 0.0 };
            0.5 * (left + right)
        };
        let mut total = 0.0;
        for i in 0..self.xs.len() {
            for j in 0..self.ys.len() {
                total += w(&self.xs, i) * w(&self.ys, j) * self.get(i, j);
            }
        }
        total
    }

    /// Writes `x,y,density` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
        w.write_record(["x", "y", "density"]).map_err(io)?;
        for (i, x) in self.xs.iter().enumerate() {
            for (j, y) in self.ys.iter().enumerate() {
                w.write_record([x.to_string(), y.to_string(), self.get(i, j).to_string()])
                    .map_err(io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `n` evenly spaced points from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub const DEFAULT_BANDWIDTHS: (f64, f64) = (0.15, 1.0);

/// Product-Gaussian KDE of `(log-charge, los)` points on `xs × ys`.
pub fn kde_2d(points: &[(f64, f64)], bandwidths: (f64, f64), xs: &[f64], ys: &[f64]) -> Result<DensityGrid> {
    let (hx, hy) = bandwidths;
    if !(hx > 0.0 && hy > 0.0) {
        return Err(Error::validation("bandwidths", "must be > 0"));
    }
    if points.is_empty() {
        return Err(Error::validation("points", "need at least one point"));
    }
    let norm = 1.0 / (2.0 * std::f64::consts::PI * hx * hy * points.len() as f64);
    let kernel = |d: f64, h: f64| (-0.5 * (d / h) * (d / h)).exp();
    // The kernel is separable, so precompute each axis once.
    let ky: Vec<Vec<f64>> = ys
        .par_iter()
        .map(|&y| points.iter().map(|p| kernel(y - p.1, hy)).collect())
        .collect();
    let values: Vec<f64> = xs
        .par_iter()
        .flat_map_iter(|&x| {
            let kx: Vec<f64> = points.iter().map(|p| kernel(x - p.0, hx)).collect();
            ky.iter()
                .map(|row| kx.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() * norm)
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(DensityGrid {
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        values,
    })
}

/// Model density of `(ln Y, T)` on `xs × ys`.
pub fn model_density_grid(m: &FittedModel, xs: &[f64], ys: &[f64]) -> DensityGrid {
    let values = xs
        .par_iter()
        .flat_map_iter(|&x| {
            ys.iter()
                .map(move |&t| (m.log_joint_pdf(x.exp(), t) + x).exp())
                .collect::<Vec<_>>()
        })
        .collect();
    DensityGrid {
        xs: xs.to_vec(),
        ys: ys.to_vec(),
        values,
    }
}
