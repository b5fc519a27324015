//! Parameter sets used by tests, benchmarks and the CLI defaults.

use rand::Rng;

use crate::phase_type::CphParams;
use crate::rgrst::LognormalParams;

/// Four-phase reference model fitted to hospital charge / LOS data.
///
/// The published absorption rates carry a minus sign and the first forward
/// rate is reported as approximately zero; here the rates are taken in
/// absolute value and the first forward rate is clamped to `1e-6` so the
/// parameters are admissible.
pub fn reference_four_phase() -> (CphParams, LognormalParams) {
    let cph = CphParams::new(
        vec![0.999_720_43, 0.000_000_1, 0.000_000_1, 0.000_279_37],
        vec![1e-6, 6.45, 0.83],
        vec![2.09, 9.05, 0.91, 0.14],
    )
    .expect("reference parameters are valid");
    let lp = LognormalParams::new(-0.5715, 0.7149).expect("valid");
    (cph, lp)
}

/// A four-phase model where every phase carries at least 10% of the
/// initial mass; suited to parameter-recovery experiments.
pub fn well_conditioned_four_phase() -> (CphParams, LognormalParams) {
    let cph = CphParams::new(vec![0.4, 0.3, 0.2, 0.1], vec![1.5, 1.0, 0.6], vec![0.8, 0.5, 0.4, 0.3]).expect("valid");
    let lp = LognormalParams::new(-0.5715, 0.7149).expect("valid");
    (cph, lp)
}

/// Random admissible Coxian parameters with `1..=max_n` phases.
pub fn random_cph<R: Rng + ?Sized>(rng: &mut R, max_n: usize) -> CphParams {
    let n = rng.random_range(1..=max_n.max(1));
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut alpha: Vec<f64> = raw.iter().map(|a| a / total).collect();
    let head: f64 = alpha[..n - 1].iter().sum();
    alpha[n - 1] = 1.0 - head;
    let lambda = (0..n - 1).map(|_| rng.random_range(0.2..3.0)).collect();
    let c = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
    CphParams::new(alpha, lambda, c).expect("random parameters are valid by construction")
}

pub fn random_lognormal<R: Rng + ?Sized>(rng: &mut R) -> LognormalParams {
    LognormalParams::new(rng.random_range(-1.0..1.0), rng.random_range(0.3..1.5)).expect("valid")
}
