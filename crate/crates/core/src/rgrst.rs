//! Random-growth primitives with conditional growth rate `q(y, t) = y`:
//! log-normal initial charge, its pushforward along the growth flow, and the
//! characteristic flow itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::normal::{std_normal_log_pdf, LN_SQRT_2PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLognormal")]
pub struct LognormalParams {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Deserialize)]
struct RawLognormal {
    mu: f64,
    sigma: f64,
}

impl TryFrom<RawLognormal> for LognormalParams {
    type Error = Error;
    fn try_from(raw: RawLognormal) -> Result<Self> {
        LognormalParams::new(raw.mu, raw.sigma)
    }
}

impl LognormalParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::validation("mu", format!("must be finite, got {mu}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::validation(
                "sigma",
                format!("must be finite and > 0, got {sigma}"),
            ));
        }
        Ok(LognormalParams { mu, sigma })
    }

    pub fn mean(&self) -> f64 {
        (self.mu + 0.5 * self.sigma * self.sigma).exp()
    }
}

/// Growth model with `q(y, t) = y`: charges grow as `y0 * e^t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthModel {
    pub initial: LognormalParams,
}

impl GrowthModel {
    pub fn new(initial: LognormalParams) -> Self {
        GrowthModel { initial }
    }

    /// Growth rate `q(y, t)`.
    #[inline]
    pub fn rate(&self, y: f64, _t: f64) -> f64 {
        y
    }

    /// Standardized initial log-charge of the trajectory through `(y, t)`:
    /// `(ln y - t - mu) / sigma`. Constant along characteristics.
    #[inline]
    pub fn standardize(&self, y: f64, t: f64) -> f64 {
        (y.ln() - t - self.initial.mu) / self.initial.sigma
    }

    /// Inverse of [`standardize`](Self::standardize) at time `t`.
    #[inline]
    pub fn charge_at(&self, z: f64, t: f64) -> f64 {
        (self.initial.mu + self.initial.sigma * z + t).exp()
    }
}

fn check_charge(op: &'static str, y: f64) -> Result<()> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::domain(op, format!("charge must be finite and > 0, got {y}")));
    }
    Ok(())
}

/// Log-normal density of the initial charge.
pub fn initial_pdf(lp: &LognormalParams, y: f64) -> Result<f64> {
    check_charge("initial_pdf", y)?;
    let z = (y.ln() - lp.mu) / lp.sigma;
    Ok((std_normal_log_pdf(z) - lp.sigma.ln() - y.ln()).exp())
}

/// Log of [`potential_pdf`], finite far into the tails.
pub fn potential_log_pdf(gm: &GrowthModel, y: f64, t: f64) -> Result<f64> {
    check_charge("potential_pdf", y)?;
    if !(t >= 0.0) {
        return Err(Error::domain("potential_pdf", format!("t must be >= 0, got {t}")));
    }
    let z = gm.standardize(y, t);
    Ok(-0.5 * z * z - LN_SQRT_2PI - gm.initial.sigma.ln() - y.ln())
}

/// Density of the potential charge at time `t`: the initial density
/// evaluated at `y e^{-t}`, times `e^{-t}`.
pub fn potential_pdf(gm: &GrowthModel, y: f64, t: f64) -> Result<f64> {
    potential_log_pdf(gm, y, t).map(f64::exp)
}

/// Backward characteristic: the charge `s` time units before `(y, t)`.
pub fn flow(_gm: &GrowthModel, y: f64, t: f64, s: f64) -> Result<f64> {
    if !(s >= 0.0) || s > t {
        return Err(Error::domain(
            "flow",
            format!("lookback s = {s} must lie in [0, t = {t}]"),
        ));
    }
    Ok(y * (-s).exp())
}

/// Forward flow: the charge reached from `x` after `s` time units.
pub fn flow_inverse(_gm: &GrowthModel, x: f64, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::domain("flow_inverse", format!("s must be >= 0, got {s}")));
    }
    Ok(x * s.exp())
}
