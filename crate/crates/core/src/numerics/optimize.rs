//! Multi-start Nelder–Mead with optional finite-difference BFGS polish.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerSpec {
    pub max_iterations: usize,
    /// Convergence tolerance on the simplex's objective spread.
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Edge length of the initial simplex.
    pub initial_step: f64,
    /// Standard deviation of the start-point jitter for restarts after the first.
    pub perturbation: f64,
    /// Polish the best simplex vertex with central-difference BFGS.
    pub refine: bool,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec {
            max_iterations: 20_000,
            tol: 1e-8,
            restarts: 4,
            seed: 0,
            initial_step: 0.5,
            perturbation: 0.75,
            refine: true,
        }
    }
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.restarts < 1 {
            return Err(Error::validation("optimizer.restarts", "must be >= 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::validation("optimizer.tol", "must be > 0"));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::validation("optimizer.initial_step", "must be > 0"));
        }
        if !(self.perturbation >= 0.0) {
            return Err(Error::validation("optimizer.perturbation", "must be >= 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::validation("optimizer.max_iterations", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub start_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub restarts_used: usize,
    pub converged: bool,
    /// False when no restart improved on the start point; `x` is then the start.
    pub improved: bool,
}

struct RunOutcome {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    evaluations: usize,
    converged: bool,
}

struct Counted<'a, F> {
    f: &'a F,
    evaluations: usize,
    best_x: Vec<f64>,
    best_value: f64,
}

impl<'a, F: Fn(&[f64]) -> f64> Counted<'a, F> {
    fn new(f: &'a F, dim: usize) -> Self {
        Counted {
            f,
            evaluations: 0,
            best_x: vec![0.0; dim],
            best_value: f64::INFINITY,
        }
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v < self.best_value {
            self.best_value = v;
            self.best_x.copy_from_slice(x);
        }
        v
    }
}

fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &mut Counted<'_, F>,
    start: &[f64],
    step: f64,
    spec: &OptimizerSpec,
    budget: usize,
) -> (usize, bool) {
    let n = start.len();
    let nf = n as f64;
    // Dimension-adaptive coefficients (Gao & Han).
    let (alpha, gamma, rho, shrink) = if n >= 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += step * (1.0 + start[i].abs().min(10.0) * 0.1);
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f.eval(v)).collect();

    let mut iterations = 0;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    while iterations < budget {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = values[0];
        let worst = values[n];
        let spread = worst - best;
        let diameter = simplex[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if (spread.is_finite() && spread <= spec.tol * (best.abs() + spec.tol)) || diameter < 1e-13 {
            return (iterations, true);
        }
        iterations += 1;

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for v in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / nf;
            }
        }
        let worst_pt = simplex[n].clone();
        for i in 0..n {
            trial[i] = centroid[i] + alpha * (centroid[i] - worst_pt[i]);
        }
        let f_reflect = f.eval(&trial);

        if f_reflect < values[0] {
            for i in 0..n {
                trial2[i] = centroid[i] + gamma * (trial[i] - centroid[i]);
            }
            let f_expand = f.eval(&trial2);
            if f_expand < f_reflect {
                simplex[n].copy_from_slice(&trial2);
                values[n] = f_expand;
            } else {
                simplex[n].copy_from_slice(&trial);
                values[n] = f_reflect;
            }
            continue;
        }
        if f_reflect < values[n - 1] {
            simplex[n].copy_from_slice(&trial);
            values[n] = f_reflect;
            continue;
        }
        let outside = f_reflect < values[n];
        for i in 0..n {
            trial2[i] = if outside {
                centroid[i] + rho * (trial[i] - centroid[i])
            } else {
                centroid[i] + rho * (worst_pt[i] - centroid[i])
            };
        }
        let f_contract = f.eval(&trial2);
        let accept = if outside {
            f_contract <= f_reflect
        } else {
            f_contract < values[n]
        };
        if accept {
            simplex[n].copy_from_slice(&trial2);
            values[n] = f_contract;
            continue;
        }
        let best_pt = simplex[0].clone();
        for j in 1..=n {
            for i in 0..n {
                simplex[j][i] = best_pt[i] + shrink * (simplex[j][i] - best_pt[i]);
            }
            values[j] = f.eval(&simplex[j]);
        }
    }
    (iterations, false)
}

fn central_gradient<F: Fn(&[f64]) -> f64>(f: &mut Counted<'_, F>, x: &[f64], g: &mut [f64]) -> bool {
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let up = f.eval(&probe);
        probe[i] = x[i] - h;
        let down = f.eval(&probe);
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
        if !g[i].is_finite() {
            return false;
        }
    }
    true
}

/// Quasi-Newton polish. The objective may have kinks, so every step is
/// guarded by a sufficient-decrease test and the run stops at the first
/// failed line search.
fn bfgs_polish<F: Fn(&[f64]) -> f64>(f: &mut Counted<'_, F>, x0: &[f64], iterations: usize) {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f.eval(&x);
    let mut g = vec![0.0; n];
    if !fx.is_finite() || !central_gradient(f, &x, &mut g) {
        return;
    }
    let mut h_inv = vec![vec![0.0; n]; n];
    for (i, row) in h_inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut g_new = vec![0.0; n];
    for _ in 0..iterations {
        let dir: Vec<f64> = (0..n)
            .map(|i| -(0..n).map(|j| h_inv[i][j] * g[j]).sum::<f64>())
            .collect();
        let slope: f64 = dir.iter().zip(&g).map(|(d, gi)| d * gi).sum();
        if !(slope < 0.0) {
            return;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            let fc = f.eval(&cand);
            if fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            return;
        };
        if !central_gradient(f, &x_new, &mut g_new) {
            return;
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        g.copy_from_slice(&g_new);
        if decrease <= 1e-12 * (1.0 + fx.abs()) {
            return;
        }
        if sy > 1e-12 {
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h_inv[i][j] * y[j]).sum()).collect();
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    h_inv[i][j] += (sy + yhy) * s[i] * s[j] / (sy * sy) - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }
    }
}

fn run_from<F: Fn(&[f64]) -> f64>(objective: &F, start: &[f64], spec: &OptimizerSpec) -> RunOutcome {
    let mut counted = Counted::new(objective, start.len());
    counted.eval(start);
    let mut iterations = 0;
    let mut converged = false;
    let mut step = spec.initial_step;
    // Re-seed the simplex at the incumbent until a restart stops paying off.
    for _ in 0..6 {
        let before = counted.best_value;
        let budget = spec.max_iterations.saturating_sub(iterations);
        if budget == 0 {
            break;
        }
        let incumbent = counted.best_x.clone();
        let (it, conv) = nelder_mead(&mut counted, &incumbent, step, spec, budget);
        iterations += it;
        converged = conv;
        let gain = before - counted.best_value;
        if before.is_finite() && gain <= spec.tol * (counted.best_value.abs() + spec.tol) {
            break;
        }
        step = (step * 0.5).max(1e-3);
    }
    if spec.refine && counted.best_value.is_finite() {
        let incumbent = counted.best_x.clone();
        bfgs_polish(&mut counted, &incumbent, 100);
        // One more simplex pass from the polished point guards against
        // the polish stopping on a kink.
        let incumbent = counted.best_x.clone();
        let (it, conv) = nelder_mead(
            &mut counted,
            &incumbent,
            0.05 * spec.initial_step,
            spec,
            spec.max_iterations,
        );
        iterations += it;
        converged = converged || conv;
    }
    RunOutcome {
        x: counted.best_x,
        value: counted.best_value,
        iterations,
        evaluations: counted.evaluations,
        converged,
    }
}

/// Minimizes `objective` from `x0`. Restart `k > 0` starts from `x0`
/// jittered by a normal draw from the stream `(seed, k)`; restarts run in
/// parallel and the winner is chosen deterministically (lowest value, then
/// lowest restart index).
pub fn minimize<F>(objective: F, x0: &[f64], spec: &OptimizerSpec) -> Result<Minimum>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    spec.validate()?;
    if x0.is_empty() {
        return Err(Error::validation("x0", "must have at least one coordinate"));
    }
    let start_value = objective(x0);
    if !start_value.is_finite() {
        return Err(Error::Optimizer(format!(
            "objective is not finite at the start point ({start_value})"
        )));
    }

    let outcomes: Vec<RunOutcome> = (0..spec.restarts)
        .into_par_iter()
        .map(|k| {
            let start = if k == 0 {
                x0.to_vec()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(k as u64);
                let mut cand = x0.to_vec();
                for _ in 0..20 {
                    cand = x0
                        .iter()
                        .map(|&x| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            x + spec.perturbation * z
                        })
                        .collect();
                    if objective(&cand).is_finite() {
                        break;
                    }
                }
                cand
            };
            run_from(&objective, &start, spec)
        })
        .collect();

    let iterations = outcomes.iter().map(|o| o.iterations).sum();
    let evaluations = outcomes.iter().map(|o| o.evaluations).sum::<usize>() + 1;
    let converged = outcomes.iter().any(|o| o.converged);
    let best = outcomes
        .into_iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.value.total_cmp(&b.value).then(ia.cmp(ib)))
        .map(|(_, o)| o)
        .expect("restarts >= 1");

    if !(best.value < start_value) {
        log::warn!("optimizer did not improve on the start point ({start_value})");
        return Ok(Minimum {
            x: x0.to_vec(),
            value: start_value,
            start_value,
            iterations,
            evaluations,
            restarts_used: spec.restarts,
            converged,
            improved: false,
        });
    }
    Ok(Minimum {
        x: best.x,
        value: best.value,
        start_value,
        iterations,
        evaluations,
        restarts_used: spec.restarts,
        converged,
        improved: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> OptimizerSpec {
        OptimizerSpec {
            restarts: 2,
            ..OptimizerSpec::default()
        }
    }

    #[test]
    fn quadratic_bowl_1d() {
        let m = minimize(|x| (x[0] - 3.0).powi(2), &[0.0], &spec()).unwrap();
        assert!((m.x[0] - 3.0).abs() < 1e-5, "{:?}", m.x);
        assert!(m.improved);
    }

    #[test]
    fn quadratic_bowl_2d() {
        let m = minimize(|x| x[0] * x[0] + x[1] * x[1], &[1.0, 1.0], &spec()).unwrap();
        assert!(m.x.iter().all(|v| v.abs() < 1e-5), "{:?}", m.x);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(f, &[-1.2, 1.0], &spec()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3, "{:?}", m.x);
    }

    #[test]
    fn pure_nelder_mead_without_polish() {
        let s = OptimizerSpec {
            refine: false,
            restarts: 1,
            ..OptimizerSpec::default()
        };
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(f, &[-1.2, 1.0], &s).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-3 && (m.x[1] - 1.0).abs() < 1e-3, "{:?}", m.x);
    }

    #[test]
    fn deterministic_given_seed() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(4) + (3.0 * x[0]).sin();
        let a = minimize(f, &[0.5, 0.5], &spec()).unwrap();
        let b = minimize(f, &[0.5, 0.5], &spec()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn start_at_minimum_is_flagged() {
        let m = minimize(|x| x[0].abs(), &[0.0], &spec()).unwrap();
        assert!(!m.improved);
        assert_eq!(m.x, vec![0.0]);
    }

    #[test]
    fn nonfinite_start_is_an_error() {
        assert!(minimize(|_| f64::NAN, &[0.0], &spec()).is_err());
        assert!(minimize(|x| x[0], &[0.0], &OptimizerSpec { restarts: 0, ..spec() }).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn never_worse_than_start(a in -3.0f64..3.0, b in -3.0f64..3.0, k in 0.5f64..5.0) {
            let f = |x: &[f64]| (k * x[0]).cos() + (x[0] - a).powi(2) * 0.1 + (x[1] - b).abs();
            let x0 = [0.3, -0.2];
            let m = minimize(f, &x0, &spec()).unwrap();
            proptest::prop_assert!(m.value <= f(&x0));
            proptest::prop_assert!((f(&m.x) - m.value).abs() < 1e-12);
        }
    }
}
