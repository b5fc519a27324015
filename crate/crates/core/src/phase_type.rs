//! Coxian phase-type distributions: generator assembly, density, CDF,
//! phase occupancy and exact path sampling.
//!
//! Phases are numbered `1..=n` in every public return value.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::expm::uniformized_action;
use crate::numerics::Matrix;

const SIMPLEX_TOL: f64 = 1e-12;

/// Coxian parameters: initial distribution `alpha`, forward rates
/// `lambda` (phase `i -> i+1`) and absorption rates `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCph")]
pub struct CphParams {
    alpha: Vec<f64>,
    lambda: Vec<f64>,
    c: Vec<f64>,
}

#[derive(Deserialize)]
struct RawCph {
    alpha: Vec<f64>,
    lambda: Vec<f64>,
    c: Vec<f64>,
}

impl TryFrom<RawCph> for CphParams {
    type Error = Error;

    fn try_from(raw: RawCph) -> Result<Self> {
        CphParams::new(raw.alpha, raw.lambda, raw.c)
    }
}

impl CphParams {
    pub fn new(alpha: Vec<f64>, lambda: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let n = c.len();
        if n == 0 {
            return Err(Error::validation("c", "need at least one phase"));
        }
        if alpha.len() != n {
            return Err(Error::validation(
                "alpha",
                format!("expected {n} entries, got {}", alpha.len()),
            ));
        }
        if lambda.len() != n - 1 {
            return Err(Error::validation(
                "lambda",
                format!("expected {} entries, got {}", n - 1, lambda.len()),
            ));
        }
        if let Some((i, v)) = c.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::validation("c", format!("c[{i}] = {v} must be finite and > 0")));
        }
        if let Some((i, v)) = lambda.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::validation(
                "lambda",
                format!("lambda[{i}] = {v} must be finite and > 0"),
            ));
        }
        if let Some((i, v)) = alpha.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::validation("alpha", format!("alpha[{i}] = {v} must be >= 0")));
        }
        let total: f64 = alpha.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::validation("alpha", format!("entries sum to {total}, not 1")));
        }
        Ok(CphParams { alpha, lambda, c })
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// Total outflow rate of phase `i` (0-based).
    #[inline]
    fn outflow(&self, i: usize) -> f64 {
        self.c[i] + self.lambda.get(i).copied().unwrap_or(0.0)
    }

    fn uniformization_rate(&self) -> f64 {
        (0..self.n()).map(|i| self.outflow(i)).fold(0.0, f64::max)
    }

    /// `v^T exp(S t)` exploiting the bidiagonal structure.
    pub(crate) fn propagate(&self, v: &[f64], t: f64) -> Vec<f64> {
        let q = self.uniformization_rate();
        let n = self.n();
        let keep: Vec<f64> = (0..n).map(|i| 1.0 - self.outflow(i) / q).collect();
        let forward: Vec<f64> = self.lambda.iter().map(|l| l / q).collect();
        uniformized_action(v, t, q, |x, out| {
            out[0] = x[0] * keep[0];
            for j in 1..n {
                out[j] = x[j] * keep[j] + x[j - 1] * forward[j - 1];
            }
        })
    }

    /// Log-densities at each time of an ascending slice, propagating the
    /// phase vector between consecutive times and renormalizing as it goes
    /// so that far-tail values never underflow.
    pub fn log_pdf_sorted(&self, times: &[f64]) -> Result<Vec<f64>> {
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::domain("log_pdf_sorted", "times must be ascending"));
        }
        if times.first().is_some_and(|&t| !(t >= 0.0)) {
            return Err(Error::domain("log_pdf_sorted", "times must be >= 0"));
        }
        let mut out = Vec::with_capacity(times.len());
        let mut state = self.alpha.clone();
        let mut log_scale = 0.0;
        let mut now = 0.0;
        for &t in times {
            if t > now {
                state = self.propagate(&state, t - now);
                now = t;
                let mass: f64 = state.iter().sum();
                if mass > 0.0 {
                    state.iter_mut().for_each(|x| *x /= mass);
                    log_scale += mass.ln();
                } else {
                    log_scale = f64::NEG_INFINITY;
                }
            }
            let dens: f64 = state.iter().zip(&self.c).map(|(x, c)| x * c).sum();
            out.push(log_scale + dens.ln());
        }
        Ok(out)
    }

    /// Sum of log-densities over arbitrary (unsorted) positive times.
    pub fn log_likelihood(&self, times: &[f64]) -> Result<f64> {
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(self.log_pdf_sorted(&sorted)?.iter().sum())
    }

    /// Quantile of the absorption time for upper-tail mass `tail`, by
    /// doubling then bisection on the survival function.
    pub fn upper_quantile(&self, tail: f64) -> f64 {
        let survival = |t: f64| self.propagate(&self.alpha, t).iter().sum::<f64>();
        let mean_rate = self.c.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = 1.0 / mean_rate;
        while survival(hi) > tail && hi < 1e6 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if survival(mid) > tail {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

/// Sub-generator `S` of the transient phases plus the exit-rate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SubGenerator {
    pub s: Matrix,
    pub exit: Vec<f64>,
}

impl SubGenerator {
    /// Full `(n+1) x (n+1)` generator: exit column appended, zero row for
    /// the absorbing state.
    pub fn full_generator(&self) -> Matrix {
        let n = self.s.dim();
        let mut full = Matrix::zeros(n + 1);
        for i in 0..n {
            for j in 0..n {
                full.set(i, j, self.s.get(i, j));
            }
            full.set(i, n, self.exit[i]);
        }
        full
    }
}

pub fn build_generator(p: &CphParams) -> SubGenerator {
    let n = p.n();
    let mut s = Matrix::zeros(n);
    for i in 0..n {
        s.set(i, i, -p.outflow(i));
        if i + 1 < n {
            s.set(i, i + 1, p.lambda[i]);
        }
    }
    SubGenerator { s, exit: p.c.clone() }
}

/// Absorption-time density `alpha exp(S t) exit`.
pub fn cph_pdf(p: &CphParams, t: f64) -> f64 {
    if !(t >= 0.0) {
        return 0.0;
    }
    p.propagate(&p.alpha, t).iter().zip(&p.c).map(|(x, c)| x * c).sum()
}

/// `1 - alpha exp(S t) 1`.
pub fn cph_cdf(p: &CphParams, t: f64) -> f64 {
    if !(t > 0.0) {
        return 0.0;
    }
    let surv: f64 = p.propagate(&p.alpha, t).iter().sum();
    (1.0 - surv).clamp(0.0, 1.0)
}

/// `(P(phase 1), ..., P(phase n), P(absorbed))` at time `t`.
pub fn phase_occupancy(p: &CphParams, t: f64) -> Vec<f64> {
    let t = t.max(0.0);
    let mut occ = p.propagate(&p.alpha, t);
    let surv: f64 = occ.iter().sum();
    occ.push((1.0 - surv).clamp(0.0, 1.0));
    occ
}

#[derive(Debug, Clone, PartialEq)]
pub struct CphSample {
    pub absorption_time: f64,
    /// `(phase, entry time)` for every phase visited, in order.
    pub path: Vec<(usize, f64)>,
}

/// Exact simulation of the Coxian chain.
pub fn cph_sample<R: Rng + ?Sized>(p: &CphParams, rng: &mut R) -> CphSample {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut phase = p.n() - 1;
    for (i, a) in p.alpha.iter().enumerate() {
        acc += a;
        if u < acc {
            phase = i;
            break;
        }
    }
    let mut now = 0.0;
    let mut path = vec![(phase + 1, 0.0)];
    loop {
        let rate = p.outflow(phase);
        let e: f64 = -(1.0 - rng.random::<f64>()).ln();
        now += e / rate;
        let forward = p.lambda.get(phase).copied().unwrap_or(0.0);
        if rng.random::<f64>() * rate < forward {
            phase += 1;
            path.push((phase + 1, now));
        } else {
            return CphSample {
                absorption_time: now,
                path,
            };
        }
    }
}
