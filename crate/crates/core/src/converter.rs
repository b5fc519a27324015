//! Conversion of a Coxian phase-type model into a charge / length-of-stay
//! model: partition curves splitting the (charge, time) plane into bands,
//! per-band survival functions built along characteristics, and the joint
//! density.
//!
//! Everything is computed in standardized coordinates
//! `z = (ln y - t - mu) / sigma`, which are constant along the growth
//! characteristics `y0 * e^t`. In these coordinates the curves do not depend
//! on `(mu, sigma)`; a charge-space curve is `C_k(t) = exp(mu + sigma z_k(t) + t)`.
//!
//! Bands and curves are numbered from 1. Band `b` at time `t` is
//! `z_{b-1}(t) <= z < z_b(t)` with `z_0 = -inf` and `z_n = +inf`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::normal::{std_normal_log_pdf, std_normal_quantile_split};
use crate::numerics::{integrate_path, integrate_with_breaks, MonotoneCubic, OdeSpec, QuadratureSpec};
use crate::phase_type::CphParams;
use crate::rgrst::{GrowthModel, LognormalParams};

/// Distance, in standard deviations, at which the open ends of the first
/// and last band are truncated.
pub const TAIL_SD: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstructionSpec {
    /// Time up to which curves are built. `None` uses the
    /// `1 - horizon_tail` quantile of the phase-type distribution.
    pub horizon: Option<f64>,
    pub horizon_tail: f64,
    /// Largest time step between stored curve nodes.
    pub max_step: f64,
    pub ode: OdeSpec,
    /// Relative tolerance for every band integral.
    pub rel_tol: f64,
}

impl Default for ConstructionSpec {
    fn default() -> Self {
        ConstructionSpec {
            horizon: None,
            horizon_tail: 1e-8,
            max_step: 0.05,
            ode: OdeSpec::default(),
            rel_tol: 1e-10,
        }
    }
}

impl ConstructionSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::validation("horizon", format!("must be finite and > 0, got {h}")));
            }
        }
        if !(self.horizon_tail > 0.0 && self.horizon_tail < 1.0) {
            return Err(Error::validation("horizon_tail", "must lie in (0, 1)"));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::validation("max_step", "must be > 0"));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::validation("rel_tol", "must lie in (0, 1)"));
        }
        self.ode.validate()
    }

    fn quadrature(&self) -> QuadratureSpec {
        QuadratureSpec::relative(self.rel_tol)
    }
}

/// Standardized initial cut points `z_k(0)`, `k = 1..n-1`: the standard
/// normal quantiles of the cumulative initial masses.
pub fn standardized_cutpoints(alpha: &[f64]) -> Result<Vec<f64>> {
    let n = alpha.len();
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for k in 1..n {
        let lower: f64 = alpha[..k].iter().sum();
        let upper: f64 = alpha[k..].iter().sum();
        if alpha[k - 1] <= 0.0 {
            return Err(Error::DegenerateBand {
                band: k,
                reason: "initial mass is zero".into(),
            });
        }
        if upper <= 0.0 {
            return Err(Error::DegenerateBand {
                band: k + 1,
                reason: "no initial mass above this cut point".into(),
            });
        }
        let z = std_normal_quantile_split(lower, upper);
        if let Some(&prev) = out.last() {
            if !(z > prev) {
                return Err(Error::DegenerateBand {
                    band: k,
                    reason: format!("initial mass {} is below floating-point resolution", alpha[k - 1]),
                });
            }
        }
        out.push(z);
    }
    Ok(out)
}

/// Initial cut points in charge units: the cumulative-`alpha` quantiles of
/// the initial log-normal.
pub fn initial_cutpoints(alpha: &[f64], lp: &LognormalParams) -> Result<Vec<f64>> {
    Ok(standardized_cutpoints(alpha)?
        .into_iter()
        .map(|z| (lp.mu + lp.sigma * z).exp())
        .collect())
}

/// Partition curves in standardized coordinates, each a monotone cubic
/// through its ODE nodes on `[0, horizon]`.
#[derive(Debug, Clone)]
pub struct PartitionCurves {
    curves: Vec<MonotoneCubic>,
    horizon: f64,
}

impl PartitionCurves {
    fn empty(horizon: f64) -> Self {
        PartitionCurves {
            curves: Vec::new(),
            horizon,
        }
    }

    /// Number of bands separated by these curves.
    pub fn n(&self) -> usize {
        self.curves.len() + 1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// The interpolant of curve `k` (`1..n-1`).
    pub fn curve(&self, k: usize) -> &MonotoneCubic {
        &self.curves[k - 1]
    }

    /// `z_k(t)`, with `t` clamped to `[0, horizon]`.
    #[inline]
    pub fn z(&self, k: usize, t: f64) -> f64 {
        self.curves[k - 1].eval(t)
    }

    /// `z_k(0)`.
    #[inline]
    pub fn start(&self, k: usize) -> f64 {
        self.curves[k - 1].ys()[0]
    }

    /// Time at which the characteristic at `z` crosses curve `k`: `0` if it
    /// starts above it, `None` if it is still below at the horizon.
    pub fn entry_time(&self, k: usize, z: f64) -> Option<f64> {
        let curve = &self.curves[k - 1];
        if z >= curve.ys()[0] {
            return Some(0.0);
        }
        curve.inverse_decreasing(z)
    }

    /// Band containing the standardized point `(z, t)`. Ties go up.
    pub fn band_at(&self, z: f64, t: f64) -> usize {
        // Curves are ordered at every t, so `z >= z_k(t)` is monotone in k.
        let (mut lo, mut hi) = (0usize, self.curves.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            if z >= self.curves[mid].eval(t) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo + 1
    }

    /// Band containing `z` at `t = 0`.
    pub fn start_band(&self, z: f64) -> usize {
        1 + self.curves.iter().take_while(|c| z >= c.ys()[0]).count()
    }

    /// Standardized integration limits of band `b` at time `t`, with the
    /// open ends truncated. `shift` widens the top band for integrands
    /// weighted by `e^{shift z}`.
    pub fn band_limits(&self, b: usize, t: f64, shift: f64) -> (f64, f64) {
        let n = self.n();
        let lo = if b == 1 {
            let top = if n > 1 { self.z(1, t) } else { 0.0 };
            top.min(0.0) - TAIL_SD
        } else {
            self.z(b - 1, t)
        };
        let hi = if b == n {
            let base = if n > 1 { self.start(n - 1) } else { 0.0 };
            base.max(shift).max(0.0) + TAIL_SD
        } else {
            self.z(b, t)
        };
        (lo, hi)
    }

    /// Integration breakpoints for band `b` on `[lo, hi]`: the limits plus
    /// every initial cut point strictly inside, where the survival function
    /// has kinks.
    fn breaks(&self, b: usize, lo: f64, hi: f64) -> Vec<f64> {
        let mut pts = vec![lo];
        for k in 1..b.min(self.n()) {
            let s = self.start(k);
            if s > lo && s < hi {
                pts.push(s);
            }
        }
        pts.push(hi);
        pts
    }

    /// Standardized nodes of curve `k` as `(t, z)` pairs.
    pub fn nodes(&self, k: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = &self.curves[k - 1];
        c.xs().iter().copied().zip(c.ys().iter().copied())
    }
}

/// Where band `b`'s survival function takes its boundary values: the slice
/// `[axis.0, axis.1)` of the `t = 0` axis (value 1) and, for `b > 1`, the
/// graph of the curve below (value carried over from band `b - 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandBoundary {
    pub axis: (f64, f64),
    pub lower_curve: Option<usize>,
}

/// The band-wise survival function `rho(z, t)`.
#[derive(Debug, Clone)]
pub struct PiecewiseRho {
    c: Vec<f64>,
    boundaries: Vec<BandBoundary>,
    curves: Arc<PartitionCurves>,
}

impl PiecewiseRho {
    fn new(c: &[f64], curves: Arc<PartitionCurves>) -> Self {
        let n = c.len();
        let boundaries = (1..=n)
            .map(|b| BandBoundary {
                axis: (
                    if b == 1 { f64::NEG_INFINITY } else { curves.start(b - 1) },
                    if b == n { f64::INFINITY } else { curves.start(b) },
                ),
                lower_curve: if b == 1 { None } else { Some(b - 1) },
            })
            .collect();
        PiecewiseRho {
            c: c.to_vec(),
            boundaries,
            curves,
        }
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn boundary(&self, b: usize) -> &BandBoundary {
        &self.boundaries[b - 1]
    }

    /// `ln rho_b(z, t)` using band `b`'s formula.
    pub fn log_rho_band(&self, b: usize, z: f64, t: f64) -> f64 {
        log_rho_band(&self.curves, &self.c, b, z, t)
    }

    /// `ln rho(z, t)` in whichever band contains the point.
    pub fn log_rho(&self, z: f64, t: f64) -> f64 {
        let b = self.curves.band_at(z, t);
        self.log_rho_band(b, z, t)
    }
}

/// Accumulated discharge hazard along the characteristic at `z`, assuming
/// it sits in band `b` at `t`: `c_k` times the time spent in each band `k`.
/// Only curves below band `b` are consulted, so this works while curves are
/// still being built.
fn log_rho_band(curves: &PartitionCurves, c: &[f64], b: usize, z: f64, t: f64) -> f64 {
    let b0 = curves.start_band(z).min(b);
    let mut acc = 0.0;
    let mut prev = 0.0;
    for k in b0..b {
        let tau = curves.entry_time(k, z).unwrap_or(t).clamp(prev, t.max(prev));
        acc -= c[k - 1] * (tau - prev);
        prev = tau;
    }
    acc - c[b - 1] * (t - prev).max(0.0)
}

/// `ln ∫ exp(f)` over the partition `points`, rescaled by a sampled maximum
/// so neither tiny nor huge integrands leave floating-point range.
fn log_integral<F: Fn(f64) -> f64>(f: F, points: &[f64], spec: &QuadratureSpec) -> Result<f64> {
    let a = points[0];
    let b = points[points.len() - 1];
    if !(b > a) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut peak = f64::NEG_INFINITY;
    for j in 0..=16 {
        let v = f(a + (b - a) * j as f64 / 16.0);
        if v > peak {
            peak = v;
        }
    }
    for &p in points {
        peak = peak.max(f(p));
    }
    if !peak.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let i = integrate_with_breaks(|u| (f(u) - peak).exp(), points, spec)?;
    Ok(if i > 0.0 { i.ln() + peak } else { f64::NEG_INFINITY })
}

/// Builds curve `i` (`i = curves.n()`, so all curves below exist) from its
/// initial standardized value `z0` by integrating the flux-balance ODE
/// `z' = -lambda_i ∫_{z_{i-1}}^{z} φ ρ_i du / (φ ρ_i)(z)`.
pub fn band_curve(
    curves: &PartitionCurves,
    c: &[f64],
    lambda_i: f64,
    z0: f64,
    spec: &ConstructionSpec,
) -> Result<MonotoneCubic> {
    let i = curves.n();
    if !(lambda_i > 0.0) {
        return Err(Error::validation("lambda", format!("lambda_{i} must be > 0")));
    }
    let quad = spec.quadrature();
    let rhs = |t: f64, z: f64| -> f64 {
        let lo = if i == 1 {
            z.min(0.0) - TAIL_SD
        } else {
            curves.z(i - 1, t)
        };
        if z < lo || !z.is_finite() {
            return f64::NAN;
        }
        if z == lo {
            return 0.0;
        }
        let log_f = |u: f64| std_normal_log_pdf(u) + log_rho_band(curves, c, i, u, t);
        let pts = curves.breaks(i, lo, z);
        match log_integral(log_f, &pts, &quad) {
            Ok(li) => -lambda_i * (li - log_f(z)).exp(),
            Err(_) => f64::NAN,
        }
    };
    let horizon = curves.horizon();
    let nodes = integrate_path(rhs, 0.0, z0, horizon, &[], spec.max_step, &spec.ode).map_err(|e| match e {
        Error::Ode { t, y, .. } if i > 1 && y - curves.z(i - 1, t) < 1e-6 => Error::CurveCrossing { band: i, t },
        e => e.in_band(i),
    })?;
    let (ts, zs): (Vec<f64>, Vec<f64>) = nodes.iter().map(|n| (n.t, n.y)).unzip();
    if i > 1 {
        if let Some(&(t, _)) = ts
            .iter()
            .zip(&zs)
            .map(|(t, z)| (*t, *z))
            .collect::<Vec<_>>()
            .iter()
            .find(|(t, z)| !(*z > curves.z(i - 1, *t)))
        {
            return Err(Error::CurveCrossing { band: i, t });
        }
    }
    MonotoneCubic::new(ts, zs)
}

/// A phase-type model converted to the charge / LOS plane.
#[derive(Debug, Clone)]
pub struct FittedModel {
    params: CphParams,
    lognormal: LognormalParams,
    curves: Arc<PartitionCurves>,
    rho: PiecewiseRho,
    quadrature: QuadratureSpec,
}

/// Builds the model with the default [`ConstructionSpec`].
pub fn construct_rho(p: &CphParams, lp: &LognormalParams) -> Result<FittedModel> {
    construct_rho_with(p, lp, &ConstructionSpec::default())
}

pub fn construct_rho_with(p: &CphParams, lp: &LognormalParams, spec: &ConstructionSpec) -> Result<FittedModel> {
    spec.validate()?;
    let starts = standardized_cutpoints(p.alpha())?;
    let horizon = spec.horizon.unwrap_or_else(|| p.upper_quantile(spec.horizon_tail));
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::validation("horizon", format!("resolved to {horizon}")));
    }
    let mut curves = PartitionCurves::empty(horizon);
    for (k, &z0) in starts.iter().enumerate() {
        let curve = band_curve(&curves, p.c(), p.lambda()[k], z0, spec)?;
        curves.curves.push(curve);
        log::debug!(
            "built partition curve {} with {} nodes",
            k + 1,
            curves.curves[k].xs().len()
        );
    }
    Ok(FittedModel::assemble(p.clone(), *lp, curves, spec.quadrature()))
}

impl FittedModel {
    fn assemble(
        params: CphParams,
        lognormal: LognormalParams,
        curves: PartitionCurves,
        quadrature: QuadratureSpec,
    ) -> Self {
        let curves = Arc::new(curves);
        let rho = PiecewiseRho::new(params.c(), curves.clone());
        FittedModel {
            params,
            lognormal,
            curves,
            rho,
            quadrature,
        }
    }

    pub fn params(&self) -> &CphParams {
        &self.params
    }

    pub fn lognormal(&self) -> &LognormalParams {
        &self.lognormal
    }

    pub fn growth(&self) -> GrowthModel {
        GrowthModel::new(self.lognormal)
    }

    pub fn curves(&self) -> &PartitionCurves {
        &self.curves
    }

    pub fn rho(&self) -> &PiecewiseRho {
        &self.rho
    }

    pub fn n(&self) -> usize {
        self.params.n()
    }

    pub fn horizon(&self) -> f64 {
        self.curves.horizon
    }

    pub fn quadrature(&self) -> &QuadratureSpec {
        &self.quadrature
    }

    pub fn with_quadrature(mut self, spec: QuadratureSpec) -> Self {
        self.quadrature = spec;
        self
    }

    /// Same phase-type structure and curves under different initial-charge
    /// parameters. Curves are stored in standardized coordinates, so this
    /// is exact and free.
    pub fn with_lognormal(&self, lp: LognormalParams) -> Self {
        FittedModel {
            lognormal: lp,
            ..self.clone()
        }
    }

    #[inline]
    pub fn standardize(&self, y: f64, t: f64) -> f64 {
        (y.ln() - t - self.lognormal.mu) / self.lognormal.sigma
    }

    #[inline]
    pub fn charge_at(&self, z: f64, t: f64) -> f64 {
        (self.lognormal.mu + self.lognormal.sigma * z + t).exp()
    }

    /// `C_k(t)` in charge units, `k = 0..=n` (`C_0 = 0`, `C_n = inf`).
    pub fn curve_charge(&self, k: usize, t: f64) -> f64 {
        if k == 0 {
            0.0
        } else if k >= self.n() {
            f64::INFINITY
        } else {
            self.charge_at(self.curves.z(k, t), t)
        }
    }

    /// Band containing charge `y` at time `t`; ties go to the upper band.
    pub fn band_of(&self, y: f64, t: f64) -> usize {
        self.curves.band_at(self.standardize(y, t), t)
    }

    /// Survival function `rho(y, t)` in charge units.
    pub fn rho_at(&self, y: f64, t: f64) -> f64 {
        self.rho.log_rho(self.standardize(y, t), t).exp()
    }

    /// Band `b`'s formula for `rho` at `(y, t)`, whether or not the point
    /// lies in band `b`.
    pub fn band_rho_at(&self, b: usize, y: f64, t: f64) -> f64 {
        self.rho.log_rho_band(b, self.standardize(y, t), t).exp()
    }

    /// `ln` of the joint density; `-inf` outside the support or horizon.
    pub fn log_joint_pdf(&self, y: f64, t: f64) -> f64 {
        if !(y > 0.0) || !(t >= 0.0) || t > self.horizon() || !y.is_finite() {
            return f64::NEG_INFINITY;
        }
        let z = self.standardize(y, t);
        let b = self.curves.band_at(z, t);
        std_normal_log_pdf(z) - self.lognormal.sigma.ln() - y.ln()
            + self.params.c()[b - 1].ln()
            + self.rho.log_rho_band(b, z, t)
    }

    /// `ln ∫_band φ(z) ρ(z, t) w(z) dz` where `ln w = log_weight`.
    fn log_band_integral<W: Fn(f64) -> f64>(
        &self,
        b: usize,
        t: f64,
        shift: f64,
        log_weight: W,
        spec: &QuadratureSpec,
    ) -> Result<f64> {
        let (lo, hi) = self.curves.band_limits(b, t, shift);
        let pts = self.curves.breaks(b, lo, hi);
        log_integral(
            |u| std_normal_log_pdf(u) + self.rho.log_rho_band(b, u, t) + log_weight(u),
            &pts,
            spec,
        )
        .map_err(|e| e.in_band(b))
    }

    /// Probability of being in band `b` and still admitted at time `t`.
    pub fn band_occupancy(&self, b: usize, t: f64) -> Result<f64> {
        Ok(self.log_band_integral(b, t, 0.0, |_| 0.0, &self.quadrature)?.exp())
    }

    pub(crate) fn log_band_occupancy_with(&self, b: usize, t: f64, spec: &QuadratureSpec) -> Result<f64> {
        self.log_band_integral(b, t, 0.0, |_| 0.0, spec)
    }

    /// Joint density of `T = t` and `ln Y <= v`: the LOS density restricted
    /// to charges at most `e^v`.
    pub fn los_density_below(&self, t: f64, v: f64) -> Result<f64> {
        if !(t >= 0.0) || t > self.horizon() {
            return Ok(0.0);
        }
        let zv = (v - t - self.lognormal.mu) / self.lognormal.sigma;
        let mut total = 0.0;
        for b in 1..=self.n() {
            let (lo, hi) = self.curves.band_limits(b, t, 0.0);
            let hi = hi.min(zv);
            if !(hi > lo) {
                continue;
            }
            let pts = self.curves.breaks(b, lo, hi);
            let li = log_integral(
                |u| std_normal_log_pdf(u) + self.rho.log_rho_band(b, u, t),
                &pts,
                &self.quadrature,
            )
            .map_err(|e| e.in_band(b))?;
            total += self.params.c()[b - 1] * li.exp();
        }
        Ok(total)
    }

    /// `ln ∫_band (y - C_{b-1}(t)) p̃ ρ dy`.
    pub(crate) fn log_band_excess(&self, b: usize, t: f64, spec: &QuadratureSpec) -> Result<f64> {
        let sigma = self.lognormal.sigma;
        let base = self.lognormal.mu + t;
        if b == 1 {
            self.log_band_integral(b, t, sigma, |u| base + sigma * u, spec)
        } else {
            let floor = self.curves.z(b - 1, t);
            self.log_band_integral(
                b,
                t,
                sigma,
                |u| base + sigma * u + (-(sigma * (floor - u)).exp()).ln_1p(),
                spec,
            )
        }
    }
}

/// Joint density of (total charge, LOS): `p̃(y, t) c_b ρ_b(y, t)` in the
/// band `b` containing `(y, t)`; zero outside the support or past the
/// model horizon.
pub fn joint_pdf(m: &FittedModel, y: f64, t: f64) -> f64 {
    m.log_joint_pdf(y, t).exp()
}

/// LOS density obtained by integrating the joint density over charge.
pub fn marginal_los_pdf(m: &FittedModel, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain("marginal_los_pdf", format!("t must be >= 0, got {t}")));
    }
    if t > m.horizon() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for b in 1..=m.n() {
        total += m.params.c()[b - 1] * m.band_occupancy(b, t)?;
    }
    Ok(total)
}

/// JSON form of a [`FittedModel`]: parameters plus curve nodes as
/// `[t, C(t)]` pairs in charge units.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDocument {
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub c: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub curves: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn schema<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Schema(msg.into()))
}

impl FittedModel {
    pub fn to_document(&self) -> ModelDocument {
        let curves = (1..self.n())
            .map(|k| self.curves.nodes(k).map(|(t, z)| [t, self.charge_at(z, t)]).collect())
            .collect();
        ModelDocument {
            alpha: self.params.alpha().to_vec(),
            lambda: self.params.lambda().to_vec(),
            c: self.params.c().to_vec(),
            mu: self.lognormal.mu,
            sigma: self.lognormal.sigma,
            curves,
            horizon: Some(self.horizon()),
            version: None,
            config_hash: None,
        }
    }

    /// Rebuilds the model from its document; curves are taken as stored,
    /// the survival function is reconstructed from them.
    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let params = CphParams::new(doc.alpha.clone(), doc.lambda.clone(), doc.c.clone())
            .map_err(|e| Error::Schema(e.to_string()))?;
        let lp = LognormalParams::new(doc.mu, doc.sigma).map_err(|e| Error::Schema(e.to_string()))?;
        let n = params.n();
        if doc.curves.len() != n - 1 {
            return schema(format!(
                "curves: expected {} curves for {n} phases, got {}",
                n - 1,
                doc.curves.len()
            ));
        }
        let mut built = Vec::with_capacity(n - 1);
        for (k, nodes) in doc.curves.iter().enumerate() {
            if nodes.len() < 2 {
                return schema(format!("curves[{k}]: need at least two nodes"));
            }
            if nodes[0][0] != 0.0 {
                return schema(format!("curves[{k}][0]: first node must be at t = 0"));
            }
            let mut ts = Vec::with_capacity(nodes.len());
            let mut zs = Vec::with_capacity(nodes.len());
            for (j, &[t, cval]) in nodes.iter().enumerate() {
                if !(cval > 0.0 && cval.is_finite()) || !t.is_finite() {
                    return schema(format!(
                        "curves[{k}][{j}]: value {cval} at t = {t} must be finite and > 0"
                    ));
                }
                if let Some(&prev) = ts.last() {
                    if !(t > prev) {
                        return schema(format!("curves[{k}][{j}]: times must strictly increase"));
                    }
                }
                ts.push(t);
                zs.push((cval.ln() - t - lp.mu) / lp.sigma);
            }
            built.push(MonotoneCubic::new(ts, zs).map_err(|e| Error::Schema(format!("curves[{k}]: {e}")))?);
        }
        let last = built.iter().map(|c| c.x_max()).fold(f64::INFINITY, f64::min);
        let horizon = match doc.horizon {
            Some(h) if h > 0.0 && h <= last * (1.0 + 1e-12) => h,
            Some(h) if n > 1 => return schema(format!("horizon: {h} exceeds the curve range {last}")),
            Some(h) if h > 0.0 => h,
            Some(h) => return schema(format!("horizon: {h} must be > 0")),
            None if n > 1 => last,
            None => params.upper_quantile(ConstructionSpec::default().horizon_tail),
        };
        let curves = PartitionCurves { curves: built, horizon };
        for k in 2..n {
            for (j, (t, z)) in curves.nodes(k).enumerate() {
                if !(z > curves.z(k - 1, t)) {
                    return schema(format!("curves[{}][{j}]: not above curve {} at t = {t}", k - 1, k - 2));
                }
            }
        }
        Ok(FittedModel::assemble(
            params,
            lp,
            curves,
            ConstructionSpec::default().quadrature(),
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        Self::from_document(&doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::numerics::integrate;
    use crate::numerics::normal::{std_normal_cdf, std_normal_pdf};
    use crate::phase_type::{cph_pdf, phase_occupancy};
    use crate::rgrst::{initial_pdf, potential_pdf};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn two_band() -> FittedModel {
        let p = CphParams::new(vec![0.5, 0.5], vec![1.0], vec![1.0, 2.0]).unwrap();
        construct_rho(&p, &LognormalParams::new(0.0, 1.0).unwrap()).unwrap()
    }

    pub(crate) fn reference() -> &'static FittedModel {
        static M: OnceLock<FittedModel> = OnceLock::new();
        M.get_or_init(|| {
            let (p, lp) = fixtures::reference_four_phase();
            construct_rho(&p, &lp).unwrap()
        })
    }

    #[test]
    fn cutpoints_trivial_cases() {
        let lp = LognormalParams::new(0.0, 1.0).unwrap();
        let c = initial_cutpoints(&[0.5, 0.5], &lp).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12);
        let a = std_normal_cdf(1.0);
        let c = initial_cutpoints(&[a, 1.0 - a], &lp).unwrap();
        assert!((c[0] - std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn cutpoints_reject_degenerate_masses() {
        assert!(matches!(
            standardized_cutpoints(&[0.0, 1.0]),
            Err(Error::DegenerateBand { band: 1, .. })
        ));
        assert!(matches!(
            standardized_cutpoints(&[1.0, 0.0]),
            Err(Error::DegenerateBand { band: 2, .. })
        ));
        assert!(matches!(
            standardized_cutpoints(&[0.5, 0.0, 0.5]),
            Err(Error::DegenerateBand { band: 2, .. })
        ));
        assert!(standardized_cutpoints(&[1.0]).unwrap().is_empty());
    }

    #[test]
    fn reference_cutpoints_recover_alpha_by_quadrature() {
        let (p, lp) = fixtures::reference_four_phase();
        let cuts = initial_cutpoints(p.alpha(), &lp).unwrap();
        assert!(cuts.windows(2).all(|w| w[1] > w[0]));
        let spec = QuadratureSpec::relative(1e-12);
        let mut edges = vec![1e-12];
        edges.extend(&cuts);
        edges.push(1e4);
        for (i, w) in edges.windows(2).enumerate() {
            // Integrate in ln y for a well-scaled integrand.
            let mass = integrate(
                |u: f64| initial_pdf(&lp, u.exp()).unwrap() * u.exp(),
                w[0].ln(),
                w[1].ln(),
                &spec,
            )
            .unwrap();
            assert!((mass - p.alpha()[i]).abs() < 1e-8, "band {}: {mass}", i + 1);
        }
    }

    #[test]
    fn single_band_collapse() {
        let p = CphParams::new(vec![1.0], vec![], vec![0.7]).unwrap();
        let lp = LognormalParams::new(0.3, 0.8).unwrap();
        let m = construct_rho(&p, &lp).unwrap();
        let gm = GrowthModel::new(lp);
        for &(y, t) in &[(0.5, 0.0), (2.0, 1.0), (30.0, 4.0)] {
            assert!((m.rho_at(y, t) - (-0.7 * t).exp()).abs() < 1e-15);
            let want = potential_pdf(&gm, y, t).unwrap() * 0.7 * (-0.7 * t).exp();
            assert!((joint_pdf(&m, y, t) - want).abs() < 1e-14 * want);
        }
        for &t in &[0.0, 0.5, 3.0] {
            let got = marginal_los_pdf(&m, t).unwrap();
            let want = 0.7 * (-0.7 * t).exp();
            assert!((got - want).abs() < 1e-9 * want);
        }
    }

    #[test]
    fn first_band_decays_from_the_axis() {
        let m = two_band();
        for &t in &[0.0, 0.3, 2.0] {
            let z = m.curves().z(1, t) - 1.0;
            let y = m.charge_at(z, t);
            assert_eq!(m.band_of(y, t), 1);
            assert!((m.rho_at(y, t) - (-t).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn initial_slope_is_mills_ratio_for_first_curve() {
        // Band 1 has constant rho in z, so z_1'(0) = -lambda Φ(z)/φ(z).
        let m = two_band();
        let curve = m.curves().curve(1);
        let z0 = curve.ys()[0];
        let want = -std_normal_cdf(z0) / std_normal_pdf(z0);
        let (t1, z1) = (curve.xs()[1], curve.ys()[1]);
        let slope = (z1 - z0) / t1;
        assert!((slope - want).abs() < 1e-2 * want.abs(), "{slope} vs {want}");
    }

    #[test]
    fn flux_balance_at_origin() {
        // lambda_i alpha_i = p(C_i(0), 0) (C_i(0) - C_i'(0)).
        let p = CphParams::new(vec![0.3, 0.5, 0.2], vec![0.8, 1.4], vec![0.6, 1.1, 0.4]).unwrap();
        let lp = LognormalParams::new(0.2, 0.9).unwrap();
        let spec = ConstructionSpec {
            ode: OdeSpec {
                initial_step: 1e-5,
                ..OdeSpec::default()
            },
            ..ConstructionSpec::default()
        };
        let m = construct_rho_with(&p, &lp, &spec).unwrap();
        for i in 1..3 {
            let curve = m.curves().curve(i);
            let (t1, z0, z1) = (curve.xs()[1], curve.ys()[0], curve.ys()[1]);
            let dz = (z1 - z0) / t1;
            let c0 = m.curve_charge(i, 0.0);
            let dc = c0 * (lp.sigma * dz + 1.0);
            let lhs = p.lambda()[i - 1] * p.alpha()[i - 1];
            let rhs = initial_pdf(&lp, c0).unwrap() * (c0 - dc);
            assert!((lhs - rhs).abs() < 1e-4 * lhs, "curve {i}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn vanishing_forward_rate_follows_characteristic() {
        let p = CphParams::new(vec![0.5, 0.5], vec![1e-10], vec![1.0, 2.0]).unwrap();
        let lp = LognormalParams::new(0.0, 1.0).unwrap();
        let m = construct_rho_with(
            &p,
            &lp,
            &ConstructionSpec {
                horizon: Some(5.0),
                ..Default::default()
            },
        )
        .unwrap();
        let c0 = m.curve_charge(1, 0.0);
        for &t in &[0.5, 2.0, 5.0] {
            let got = m.curve_charge(1, t);
            assert!((got - c0 * t.exp()).abs() < 1e-8 * got);
        }
    }

    #[test]
    fn two_band_marginal_matches_phase_type() {
        let m = two_band();
        for &t in &[0.5, 1.0, 2.0, 4.0] {
            let got = marginal_los_pdf(&m, t).unwrap();
            let want = cph_pdf(m.params(), t);
            assert!(((got - want) / want).abs() < 1e-3, "t={t}: {got} vs {want}");
        }
    }

    #[test]
    fn reference_curves_are_ordered_and_positive() {
        let m = reference();
        assert!(m.horizon() >= 30.0);
        for k in 1..m.n() {
            for (t, z) in m.curves().nodes(k) {
                let ck = m.charge_at(z, t);
                assert!(ck > 0.0 && ck.is_finite());
                if k > 1 {
                    assert!(ck > m.curve_charge(k - 1, t), "curve {k} at t={t}");
                }
            }
        }
    }

    #[test]
    fn reference_occupancy_matches_phase_type() {
        let m = reference();
        for &t in &[0.5, 2.0, 10.0, 30.0] {
            let want = phase_occupancy(m.params(), t);
            for b in 1..=4 {
                let got = m.band_occupancy(b, t).unwrap();
                assert!(
                    ((got - want[b - 1]) / want[b - 1]).abs() < 1e-2,
                    "band {b}, t={t}: {got} vs {}",
                    want[b - 1]
                );
            }
        }
    }

    #[test]
    fn rho_is_continuous_across_curves() {
        let m = reference();
        for k in 1..m.n() {
            for (t, z) in m.curves().nodes(k).step_by(7) {
                let below = m.rho().log_rho_band(k, z, t).exp();
                let above = m.rho().log_rho_band(k + 1, z, t).exp();
                assert!((below - above).abs() < 1e-6, "curve {k}, t={t}: {below} vs {above}");
            }
        }
    }

    #[test]
    fn rho_is_one_at_time_zero() {
        let m = reference();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let y = (rng.random_range(-6.0..6.0f64)).exp();
            assert_eq!(m.rho_at(y, 0.0), 1.0);
        }
    }

    #[test]
    fn time_zero_slice_is_initial_density_times_rate() {
        let m = reference();
        for &y in &[0.1, 0.5, 1.0, 5.0, 40.0, 200.0] {
            let b = m.band_of(y, 0.0);
            let want = initial_pdf(m.lognormal(), y).unwrap() * m.params().c()[b - 1];
            assert!((joint_pdf(m, y, 0.0) - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn band_of_ties_go_up() {
        let m = two_band();
        for &t in &[0.0, 1.0, 3.0] {
            let z = m.curves().z(1, t);
            assert_eq!(m.curves().band_at(z, t), 2);
            assert_eq!(m.curves().band_at(z - 1e-9, t), 1);
        }
    }

    #[test]
    fn lognormal_swap_is_an_affine_relabel() {
        let m = two_band();
        let lp = LognormalParams::new(-0.4, 0.6).unwrap();
        let rebuilt = construct_rho(m.params(), &lp).unwrap();
        let swapped = m.with_lognormal(lp);
        for &t in &[0.0, 0.7, 3.0] {
            let a = swapped.curve_charge(1, t);
            let b = rebuilt.curve_charge(1, t);
            assert!((a - b).abs() < 1e-12 * b);
        }
    }

    #[test]
    fn json_round_trip_preserves_curves() {
        let m = reference();
        let json = m.to_json().unwrap();
        let back = FittedModel::from_json(&json).unwrap();
        assert_eq!(back.n(), 4);
        assert_eq!(back.horizon(), m.horizon());
        for k in 1..4 {
            for &t in &[0.0, 0.123, 5.5, 29.9] {
                let a = m.curve_charge(k, t);
                let b = back.curve_charge(k, t);
                assert!((a - b).abs() < 1e-12 * a);
            }
        }
        assert!((joint_pdf(&back, 2.0, 3.0) - joint_pdf(m, 2.0, 3.0)).abs() < 1e-12);
    }

    #[test]
    fn json_schema_errors_name_the_field() {
        let m = two_band();
        let mut doc = m.to_document();
        doc.sigma = -1.0;
        assert!(matches!(FittedModel::from_document(&doc), Err(Error::Schema(s)) if s.contains("sigma")));
        let mut doc = m.to_document();
        doc.curves[0][3][1] = -5.0;
        assert!(matches!(FittedModel::from_document(&doc), Err(Error::Schema(s)) if s.contains("curves[0][3]")));
        let mut doc = m.to_document();
        doc.curves.clear();
        assert!(matches!(FittedModel::from_document(&doc), Err(Error::Schema(s)) if s.contains("curves")));
        assert!(FittedModel::from_json("{\"alpha\": [1.0]}").is_err());
    }

    #[test]
    fn joint_pdf_is_zero_outside_support() {
        let m = two_band();
        assert_eq!(joint_pdf(&m, 0.0, 1.0), 0.0);
        assert_eq!(joint_pdf(&m, -1.0, 1.0), 0.0);
        assert_eq!(joint_pdf(&m, 1.0, -0.1), 0.0);
        assert_eq!(joint_pdf(&m, 1.0, m.horizon() + 1.0), 0.0);
    }

    fn pde_residual(m: &FittedModel, y: f64, t: f64, h: f64) -> f64 {
        let r = |yy: f64, tt: f64| m.rho_at(yy, tt);
        let dy = (r(y * (1.0 + h), t) - r(y * (1.0 - h), t)) / (2.0 * h * y);
        let dt = (r(y, t + h) - r(y, t - h)) / (2.0 * h);
        dy * y + dt + m.params().c()[m.band_of(y, t) - 1] * r(y, t)
    }

    #[test]
    fn two_band_pde_residual() {
        let m = two_band();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = 1e-5;
        let mut checked = 0;
        while checked < 200 {
            let t: f64 = rng.random_range(0.01..4.0);
            let z: f64 = rng.random_range(-3.0..3.0);
            let zc = m.curves().z(1, t);
            if (z - zc).abs() < 1e-3 || z.abs() > 8.0 || (z - m.curves().start(1)).abs() < 1e-3 {
                continue;
            }
            let y = m.charge_at(z, t);
            let rho = m.rho_at(y, t);
            let res = pde_residual(&m, y, t, h);
            assert!(res.abs() < 1e-4 * rho, "z={z} t={t}: residual {res}, rho {rho}");
            checked += 1;
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn rho_decreases_along_trajectories(z in -4.0f64..6.0, t in 0.0f64..25.0, d in 0.0f64..1.0) {
            let m = reference();
            let y = m.charge_at(z, t);
            let now = m.rho_at(y, t);
            let later = m.rho_at(y * d.exp(), t + d);
            proptest::prop_assert!(later <= now + 1e-10, "{later} > {now}");
        }

        #[test]
        fn band_of_matches_linear_scan(z in -6.0f64..8.0, t in 0.0f64..30.0) {
            let m = reference();
            let y = m.charge_at(z, t);
            let scan = 1 + (1..m.n()).filter(|&k| y >= m.curve_charge(k, t)).count();
            proptest::prop_assert_eq!(m.band_of(y, t), scan);
        }
    }
}
