//! Two-stage maximum likelihood. Stage 1 fits the phase-type parameters
//! to the LOS column; stage 2 freezes them, builds the partition curves and
//! fits the initial-charge parameters `(mu, sigma)` to the joint data.

use serde::Serialize;

use crate::converter::{construct_rho_with, ConstructionSpec, FittedModel};
use crate::error::{Error, Result};
use crate::numerics::{minimize, Minimum, OptimizerSpec};
use crate::phase_type::CphParams;
use crate::rgrst::LognormalParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub evaluations: usize,
    pub restarts_used: usize,
    pub converged: bool,
    /// Log-likelihood at the optimizer's start point.
    pub start_log_likelihood: f64,
}

impl Diagnostics {
    fn from_minimum(m: &Minimum, scale: f64) -> Self {
        Diagnostics {
            iterations: m.iterations,
            evaluations: m.evaluations,
            restarts_used: m.restarts_used,
            converged: m.converged,
            start_log_likelihood: -m.start_value * scale,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage1Result {
    pub params: CphParams,
    pub log_likelihood: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage2Result {
    pub lognormal: LognormalParams,
    pub log_likelihood: f64,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub model: FittedModel,
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoStageFit {
    pub stage1: Stage1Result,
    pub stage2: Stage2Result,
}

impl TwoStageFit {
    pub fn model(&self) -> &FittedModel {
        &self.stage2.model
    }
}

/// Unconstrained coordinates for `n` phases: `n - 1` simplex logits (the
/// last phase is the reference), then `ln lambda`, then `ln c`.
pub fn to_unconstrained(p: &CphParams) -> Vec<f64> {
    let n = p.n();
    let last = p.alpha()[n - 1].ln();
    let mut x: Vec<f64> = p.alpha()[..n - 1].iter().map(|a| a.ln() - last).collect();
    x.extend(p.lambda().iter().map(|l| l.ln()));
    x.extend(p.c().iter().map(|c| c.ln()));
    x
}

/// Inverse of [`to_unconstrained`].
pub fn from_unconstrained(x: &[f64], n: usize) -> Result<CphParams> {
    if n == 0 || x.len() != 3 * n - 2 {
        return Err(Error::validation(
            "x",
            format!(
                "expected {} coordinates for {n} phases, got {}",
                (3 * n).saturating_sub(2),
                x.len()
            ),
        ));
    }
    let logits = &x[..n - 1];
    let peak = logits.iter().copied().fold(0.0f64, f64::max);
    let mut alpha: Vec<f64> = logits.iter().map(|l| (l - peak).exp()).collect();
    alpha.push((-peak).exp());
    let total: f64 = alpha.iter().sum();
    alpha.iter_mut().for_each(|a| *a /= total);
    // Put the rounding residue on the largest entry so the simplex sums to 1.
    let residue = 1.0 - alpha.iter().sum::<f64>();
    let imax = (0..n).max_by(|&i, &j| alpha[i].total_cmp(&alpha[j])).unwrap_or(0);
    alpha[imax] += residue;
    let lambda = x[n - 1..2 * n - 2].iter().map(|v| v.exp()).collect();
    let c = x[2 * n - 2..].iter().map(|v| v.exp()).collect();
    CphParams::new(alpha, lambda, c)
}

/// Method-of-moments start: `c_i = lambda_i = n / mean`, uniform `alpha`.
pub fn moment_seed(los: &[f64], n: usize) -> CphParams {
    let mean = los.iter().sum::<f64>() / los.len() as f64;
    let rate = n as f64 / mean;
    CphParams::new(vec![1.0 / n as f64; n], vec![rate; n - 1], vec![rate; n]).expect("valid seed")
}

fn check_los(los: &[f64], n: usize) -> Result<()> {
    if n < 1 {
        return Err(Error::validation("n", "need at least one phase"));
    }
    let need = 10 * (3 * n - 1);
    if los.len() < need {
        return Err(Error::validation(
            "los",
            format!("{} observations is below the floor of {need} for {n} phases", los.len()),
        ));
    }
    if let Some((i, t)) = los.iter().enumerate().find(|(_, t)| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::validation(
            "los",
            format!("record {i}: LOS {t} must be finite and > 0"),
        ));
    }
    Ok(())
}

/// Fits `(alpha, lambda, c)` to positive LOS values.
pub fn stage1_fit(los: &[f64], n: usize, spec: &OptimizerSpec) -> Result<Stage1Result> {
    check_los(los, n)?;
    let mut sorted = los.to_vec();
    sorted.sort_by(f64::total_cmp);
    let count = sorted.len() as f64;
    let objective = |x: &[f64]| -> f64 {
        let Ok(p) = from_unconstrained(x, n) else {
            return f64::INFINITY;
        };
        match p.log_pdf_sorted(&sorted) {
            Ok(v) => {
                let ll: f64 = v.iter().sum();
                if ll.is_finite() {
                    -ll / count
                } else {
                    f64::INFINITY
                }
            }
            Err(_) => f64::INFINITY,
        }
    };
    let x0 = to_unconstrained(&moment_seed(&sorted, n));
    let min = minimize(objective, &x0, spec)?;
    if !min.converged {
        log::warn!("stage 1 optimizer stopped before meeting its tolerance");
    }
    let params = from_unconstrained(&min.x, n)?;
    Ok(Stage1Result {
        params,
        log_likelihood: -min.value * count,
        diagnostics: Diagnostics::from_minimum(&min, count),
    })
}

/// Closed-form maximum-likelihood `(mu, sigma)` of `ln y - t`, exact for
/// a single band and used as the stage-2 start otherwise.
pub fn log_growth_mle(data: &[(f64, f64)]) -> Result<LognormalParams> {
    let n = data.len() as f64;
    let xs: Vec<f64> = data.iter().map(|&(y, t)| y.ln() - t).collect();
    let mu = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    LognormalParams::new(mu, var.sqrt())
}

fn check_pairs(data: &[(f64, f64)]) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::validation("data", "need at least two records"));
    }
    for (i, &(y, t)) in data.iter().enumerate() {
        if !(y > 0.0 && y.is_finite()) {
            return Err(Error::validation(
                "charge",
                format!("record {i}: charge {y} must be finite and > 0"),
            ));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::validation(
                "los",
                format!("record {i}: LOS {t} must be finite and > 0"),
            ));
        }
    }
    Ok(())
}

/// Negative mean joint log-likelihood of `data` under `model` with
/// initial-charge parameters `lp`.
pub fn stage2_objective(model: &FittedModel, lp: LognormalParams, data: &[(f64, f64)]) -> f64 {
    let m = model.with_lognormal(lp);
    let ll: f64 = data.iter().map(|&(y, t)| m.log_joint_pdf(y, t)).sum();
    -ll / data.len() as f64
}

/// Fits `(mu, sigma)` on an already-built model whose horizon must cover
/// every LOS in `data`.
pub fn stage2_fit_model(data: &[(f64, f64)], model: &FittedModel, spec: &OptimizerSpec) -> Result<Stage2Result> {
    check_pairs(data)?;
    if let Some((index, &(_, los))) = data.iter().enumerate().find(|(_, (_, t))| *t > model.horizon()) {
        return Err(Error::OutsideHorizon {
            index,
            los,
            horizon: model.horizon(),
        });
    }
    let seed = log_growth_mle(data)?;
    let objective = |x: &[f64]| -> f64 {
        match LognormalParams::new(x[0], x[1].exp()) {
            Ok(lp) => stage2_objective(model, lp, data),
            Err(_) => f64::INFINITY,
        }
    };
    let min = minimize(objective, &[seed.mu, seed.sigma.ln()], spec)?;
    let lognormal = LognormalParams::new(min.x[0], min.x[1].exp())?;
    let count = data.len() as f64;
    Ok(Stage2Result {
        lognormal,
        log_likelihood: -min.value * count,
        diagnostics: Diagnostics::from_minimum(&min, count),
        model: model.with_lognormal(lognormal),
    })
}

/// Builds the partition curves for the stage-1 estimate, with the horizon
/// extended to cover the longest stay, then fits `(mu, sigma)`.
pub fn stage2_fit(
    data: &[(f64, f64)],
    s1: &Stage1Result,
    spec: &OptimizerSpec,
    construction: &ConstructionSpec,
) -> Result<Stage2Result> {
    check_pairs(data)?;
    if !s1.diagnostics.converged {
        log::warn!("stage 2 is running on a stage 1 fit that did not converge");
    }
    let model = build_covering(&s1.params, data, construction)?;
    stage2_fit_model(data, &model, spec)
}

fn build_covering(p: &CphParams, data: &[(f64, f64)], construction: &ConstructionSpec) -> Result<FittedModel> {
    let longest = data.iter().map(|&(_, t)| t).fold(0.0, f64::max);
    let default = construction
        .horizon
        .unwrap_or_else(|| p.upper_quantile(construction.horizon_tail));
    let spec = ConstructionSpec {
        horizon: Some(default.max(longest)),
        ..*construction
    };
    // Any admissible (mu, sigma) works here; curves are stored standardized.
    construct_rho_with(p, &LognormalParams::new(0.0, 1.0)?, &spec)
}

/// Stage 1 on the LOS column, then stage 2 on the pairs.
pub fn two_stage_fit(
    data: &[(f64, f64)],
    n: usize,
    spec: &OptimizerSpec,
    construction: &ConstructionSpec,
) -> Result<TwoStageFit> {
    check_pairs(data).map_err(|e| e.in_stage(1))?;
    let los: Vec<f64> = data.iter().map(|&(_, t)| t).collect();
    let stage1 = stage1_fit(&los, n, spec).map_err(|e| e.in_stage(1))?;
    let stage2 = stage2_fit(data, &stage1, spec, construction).map_err(|e| e.in_stage(2))?;
    Ok(TwoStageFit { stage1, stage2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::construct_rho;
    use crate::fixtures;
    use crate::phase_type::cph_sample;
    use crate::simulation::simulate_cohort;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quick() -> OptimizerSpec {
        OptimizerSpec {
            restarts: 2,
            ..OptimizerSpec::default()
        }
    }

    #[test]
    fn round_trip_of_reparametrization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let p = fixtures::random_cph(&mut rng, 5);
            let back = from_unconstrained(&to_unconstrained(&p), p.n()).unwrap();
            for (a, b) in p.alpha().iter().zip(back.alpha()) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in p.lambda().iter().zip(back.lambda()) {
                assert!((a - b).abs() < 1e-12 * a);
            }
            for (a, b) in p.c().iter().zip(back.c()) {
                assert!((a - b).abs() < 1e-12 * a);
            }
        }
        assert!(from_unconstrained(&[0.0; 3], 2).is_err());
    }

    #[test]
    fn exponential_rate_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let los: Vec<f64> = (0..10_000).map(|_| -(1.0 - rng.random::<f64>()).ln() / 2.0).collect();
        let fit = stage1_fit(&los, 1, &quick()).unwrap();
        let mle = los.len() as f64 / los.iter().sum::<f64>();
        assert!((fit.params.c()[0] - 2.0).abs() < 0.1);
        assert!((fit.params.c()[0] - mle).abs() < 1e-4 * mle);
    }

    #[test]
    fn two_phase_likelihood_dominates_truth() {
        let truth = CphParams::new(vec![0.6, 0.4], vec![0.9], vec![1.5, 0.3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let los: Vec<f64> = (0..3000)
            .map(|_| cph_sample(&truth, &mut rng).absorption_time)
            .collect();
        let fit = stage1_fit(&los, 2, &quick()).unwrap();
        let at_truth = truth.log_likelihood(&los).unwrap();
        assert!(
            fit.log_likelihood >= at_truth - 0.5,
            "{} vs {at_truth}",
            fit.log_likelihood
        );
        assert!(fit.log_likelihood >= fit.diagnostics.start_log_likelihood);
    }

    #[test]
    fn stage1_rejects_bad_input() {
        assert!(stage1_fit(&[1.0; 5], 1, &quick()).is_err());
        assert!(stage1_fit(&[1.0; 100], 0, &quick()).is_err());
        let mut los = vec![1.0; 100];
        los[3] = 0.0;
        assert!(matches!(stage1_fit(&los, 1, &quick()), Err(Error::Validation { .. })));
    }

    #[test]
    fn single_band_stage2_is_closed_form() {
        let p = CphParams::new(vec![1.0], vec![], vec![0.8]).unwrap();
        let m = construct_rho(&p, &LognormalParams::new(0.4, 0.6).unwrap()).unwrap();
        let cohort = simulate_cohort(&m, 3000, 5).unwrap();
        let data: Vec<(f64, f64)> = cohort.iter().map(|r| (r.y, r.t)).collect();
        let fit = two_stage_fit(&data, 1, &quick(), &ConstructionSpec::default()).unwrap();
        let mle = log_growth_mle(&data).unwrap();
        assert!((fit.stage2.lognormal.mu - mle.mu).abs() < 1e-5);
        assert!((fit.stage2.lognormal.sigma - mle.sigma).abs() < 1e-5);
        let rate = data.len() as f64 / data.iter().map(|d| d.1).sum::<f64>();
        assert!((fit.stage1.params.c()[0] - rate).abs() < 1e-4 * rate);
    }

    #[test]
    fn two_band_stage2_recovers_lognormal() {
        let p = CphParams::new(vec![0.5, 0.5], vec![1.0], vec![1.0, 2.0]).unwrap();
        let truth = LognormalParams::new(0.0, 1.0).unwrap();
        let m = construct_rho(&p, &truth).unwrap();
        let cohort = simulate_cohort(&m, 5000, 8).unwrap();
        let data: Vec<(f64, f64)> = cohort.iter().map(|r| (r.y, r.t)).collect();
        let s1 = Stage1Result {
            params: p,
            log_likelihood: 0.0,
            diagnostics: Diagnostics {
                iterations: 0,
                evaluations: 0,
                restarts_used: 0,
                converged: true,
                start_log_likelihood: 0.0,
            },
        };
        let fit = stage2_fit(&data, &s1, &quick(), &ConstructionSpec::default()).unwrap();
        assert!((fit.lognormal.mu - 0.0).abs() < 0.05, "{:?}", fit.lognormal);
        assert!((fit.lognormal.sigma - 1.0).abs() < 0.05, "{:?}", fit.lognormal);
        assert!(fit.log_likelihood >= fit.diagnostics.start_log_likelihood);
    }

    #[test]
    fn stage2_reports_records_beyond_horizon() {
        let p = CphParams::new(vec![1.0], vec![], vec![1.0]).unwrap();
        let spec = ConstructionSpec {
            horizon: Some(2.0),
            ..ConstructionSpec::default()
        };
        let m = construct_rho_with(&p, &LognormalParams::new(0.0, 1.0).unwrap(), &spec).unwrap();
        let data = vec![(1.0, 0.5), (2.0, 1.0), (3.0, 2.5)];
        match stage2_fit_model(&data, &m, &quick()) {
            Err(Error::OutsideHorizon { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected horizon error, got {other:?}"),
        }
    }

    #[test]
    fn objective_is_finite_at_generating_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for k in 0..20 {
            let p = fixtures::random_cph(&mut rng, 4);
            let lp = fixtures::random_lognormal(&mut rng);
            let m = construct_rho(&p, &lp).unwrap();
            let cohort = simulate_cohort(&m, 500, k).unwrap();
            let data: Vec<(f64, f64)> = cohort.iter().map(|r| (r.y, r.t)).collect();
            let covering = build_covering(&p, &data, &ConstructionSpec::default()).unwrap();
            let v = stage2_objective(&covering, lp, &data);
            assert!(v.is_finite(), "model {k}: {v}");
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let (p, lp) = fixtures::well_conditioned_four_phase();
        let m = construct_rho(&p, &lp).unwrap();
        let data: Vec<(f64, f64)> = simulate_cohort(&m, 400, 4)
            .unwrap()
            .iter()
            .map(|r| (r.y, r.t))
            .collect();
        let spec = OptimizerSpec {
            restarts: 2,
            max_iterations: 2000,
            ..OptimizerSpec::default()
        };
        let a = two_stage_fit(&data, 2, &spec, &ConstructionSpec::default()).unwrap();
        let b = two_stage_fit(&data, 2, &spec, &ConstructionSpec::default()).unwrap();
        assert_eq!(a.stage1.params, b.stage1.params);
        assert_eq!(a.stage2.lognormal, b.stage2.lognormal);
        assert_eq!(a.stage2.log_likelihood.to_bits(), b.stage2.log_likelihood.to_bits());
    }
}
