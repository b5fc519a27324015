//! Scalar Dormand–Prince 5(4) integrator with step-size control.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdeSpec {
    pub initial_step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_steps: usize,
}

impl Default for OdeSpec {
    fn default() -> Self {
        OdeSpec {
            initial_step: 1e-3,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_steps: 200_000,
        }
    }
}

impl OdeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0) {
            return Err(Error::validation("ode.initial_step", "must be > 0"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::validation("ode.rel_tol", "must be > 0"));
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::validation("ode.abs_tol", "must be > 0"));
        }
        if self.max_steps == 0 {
            return Err(Error::validation("ode.max_steps", "must be >= 1"));
        }
        Ok(())
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
// Fifth-order weights; also the last stage row (FSAL).
const B: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
// B minus the embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Result of one attempted step: the new state, the error norm, and the
/// derivative at the new point (first stage of the next step).
struct Trial {
    y: f64,
    err: f64,
    f_new: f64,
}

fn try_step<F: FnMut(f64, f64) -> f64>(rhs: &mut F, t: f64, y: f64, f0: f64, h: f64, spec: &OdeSpec) -> Option<Trial> {
    let mut k = [0.0; 7];
    k[0] = f0;
    k[1] = rhs(t + C[1] * h, y + h * A2[0] * k[0]);
    k[2] = rhs(t + C[2] * h, y + h * (A3[0] * k[0] + A3[1] * k[1]));
    k[3] = rhs(t + C[3] * h, y + h * (A4[0] * k[0] + A4[1] * k[1] + A4[2] * k[2]));
    k[4] = rhs(
        t + C[4] * h,
        y + h * (A5[0] * k[0] + A5[1] * k[1] + A5[2] * k[2] + A5[3] * k[3]),
    );
    k[5] = rhs(
        t + C[5] * h,
        y + h * (A6[0] * k[0] + A6[1] * k[1] + A6[2] * k[2] + A6[3] * k[3] + A6[4] * k[4]),
    );
    let y_new = y + h * (0..6).map(|i| B[i] * k[i]).sum::<f64>();
    if !y_new.is_finite() || k[..6].iter().any(|v| !v.is_finite()) {
        return None;
    }
    k[6] = rhs(t + h, y_new);
    if !k[6].is_finite() {
        return None;
    }
    let err_abs = (h * (0..7).map(|i| E[i] * k[i]).sum::<f64>()).abs();
    let scale = spec.abs_tol + spec.rel_tol * y.abs().max(y_new.abs());
    Some(Trial {
        y: y_new,
        err: err_abs / scale,
        f_new: k[6],
    })
}

/// One accepted node of an integration path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathNode {
    pub t: f64,
    pub y: f64,
    pub dydt: f64,
}

/// Integrates `dy/dt = rhs(t, y)` from `t0` to `t_end`, landing exactly on
/// every time in `stops` (ascending, inside `(t0, t_end]`) and never taking
/// a step longer than `max_step`. Returns every accepted node including the
/// start.
///
/// A non-finite `rhs` value rejects the step and shrinks it; this lets the
/// caller signal trial states that leave its domain.
pub fn integrate_path<F>(
    mut rhs: F,
    t0: f64,
    y0: f64,
    t_end: f64,
    stops: &[f64],
    max_step: f64,
    spec: &OdeSpec,
) -> Result<Vec<PathNode>>
where
    F: FnMut(f64, f64) -> f64,
{
    spec.validate()?;
    if !(t_end >= t0) {
        return Err(Error::domain("solve_ivp", "grid must not precede t0"));
    }
    let f0 = rhs(t0, y0);
    if !f0.is_finite() {
        return Err(Error::Ode {
            t: t0,
            y: y0,
            reason: "right-hand side is not finite at the initial point".into(),
        });
    }
    let mut nodes = vec![PathNode { t: t0, y: y0, dydt: f0 }];
    if t_end == t0 {
        return Ok(nodes);
    }
    let max_step = if max_step > 0.0 { max_step } else { f64::INFINITY };
    let h_min = 1e-14 * t_end.abs().max(1.0);

    let mut t = t0;
    let mut y = y0;
    let mut f = f0;
    let mut h = spec.initial_step.min(max_step);
    let mut stop_iter = stops.iter().copied().filter(|&s| s > t0 && s < t_end).peekable();
    let mut steps = 0usize;

    while t < t_end {
        if steps >= spec.max_steps {
            return Err(Error::Ode {
                t,
                y,
                reason: format!("exceeded {} steps", spec.max_steps),
            });
        }
        let next_stop = stop_iter.peek().copied().unwrap_or(t_end);
        let mut h_try = h.min(max_step);
        let mut lands = false;
        if t + h_try >= next_stop || (next_stop - t - h_try) < 1e-12 * next_stop.abs().max(1.0) {
            h_try = next_stop - t;
            lands = true;
        }
        match try_step(&mut rhs, t, y, f, h_try, spec) {
            Some(trial) if trial.err <= 1.0 => {
                steps += 1;
                t = if lands { next_stop } else { t + h_try };
                y = trial.y;
                f = trial.f_new;
                nodes.push(PathNode { t, y, dydt: f });
                if lands && next_stop < t_end {
                    stop_iter.next();
                }
                let factor = if trial.err == 0.0 {
                    5.0
                } else {
                    (0.9 * trial.err.powf(-0.2)).clamp(0.2, 5.0)
                };
                // Do not let a short landing step throttle the next one.
                h = if lands { h.max(h_try * factor) } else { h_try * factor };
            }
            Some(trial) => {
                h = h_try * (0.9 * trial.err.powf(-0.2)).clamp(0.1, 0.9);
            }
            None => {
                h = 0.25 * h_try;
            }
        }
        if h < h_min && t < t_end {
            return Err(Error::Ode {
                t,
                y,
                reason: "step size underflow".into(),
            });
        }
    }
    Ok(nodes)
}

/// Solves the scalar IVP and returns `y` at each time of the ascending
/// `t_grid` (all `>= t0`).
pub fn solve_ivp<F>(rhs: F, t0: f64, y0: f64, t_grid: &[f64], spec: &OdeSpec) -> Result<Vec<f64>>
where
    F: FnMut(f64, f64) -> f64,
{
    if t_grid.is_empty() {
        return Ok(Vec::new());
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("solve_ivp", "t_grid must be ascending"));
    }
    if t_grid[0] < t0 {
        return Err(Error::domain("solve_ivp", "t_grid[0] must be >= t0"));
    }
    let t_end = t_grid[t_grid.len() - 1];
    let nodes = integrate_path(rhs, t0, y0, t_end, t_grid, f64::INFINITY, spec)?;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut idx = 0;
    for &tg in t_grid {
        while nodes[idx].t < tg {
            idx += 1;
        }
        out.push(nodes[idx].y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exponential_growth_and_decay() {
        let s = OdeSpec::default();
        let y = solve_ivp(|_, y| y, 0.0, 1.0, &[1.0], &s).unwrap();
        assert!((y[0] - std::f64::consts::E).abs() < 1e-8);
        let y = solve_ivp(|_, y| -y, 0.0, 2.0, &[2f64.ln()], &s).unwrap();
        assert!((y[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn quadratic() {
        let y = solve_ivp(|t, _| t, 0.0, 0.0, &[3.0], &OdeSpec::default()).unwrap();
        assert!((y[0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn grid_points_are_hit_exactly() {
        let grid = [0.0, 0.3, 0.3, 1.7, 2.0];
        let y = solve_ivp(|_, y| -0.5 * y, 0.0, 1.0, &grid, &OdeSpec::default()).unwrap();
        for (g, v) in grid.iter().zip(&y) {
            assert!((v - (-0.5 * g).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_rhs_randomized_suite() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let spec = OdeSpec::default();
        for _ in 0..100 {
            let a: f64 = rng.random_range(-2.0..1.0);
            let b: f64 = rng.random_range(-3.0..3.0);
            let y0: f64 = rng.random_range(-2.0..2.0);
            let t1: f64 = rng.random_range(0.1..4.0);
            // y' = a y + b  =>  y = (y0 + b/a) e^{a t} - b/a
            let exact = (y0 + b / a) * (a * t1).exp() - b / a;
            let got = solve_ivp(|_, y| a * y + b, 0.0, y0, &[t1], &spec).unwrap()[0];
            let tol = 1e-6 * exact.abs().max(1.0);
            assert!(
                (got - exact).abs() < tol,
                "a={a} b={b} y0={y0} t={t1}: {got} vs {exact}"
            );
        }
    }

    #[test]
    fn blow_up_reports_last_state() {
        // y' = y^2, y(0) = 1 explodes at t = 1.
        match solve_ivp(|_, y| y * y, 0.0, 1.0, &[2.0], &OdeSpec::default()) {
            Err(Error::Ode { t, .. }) => assert!(t < 1.001 && t > 0.9),
            other => panic!("expected ODE failure, got {other:?}"),
        }
    }

    #[test]
    fn max_step_is_respected() {
        let nodes = integrate_path(|_, _| 0.0, 0.0, 1.0, 1.0, &[], 0.1, &OdeSpec::default()).unwrap();
        assert!(nodes.windows(2).all(|w| w[1].t - w[0].t <= 0.1 + 1e-15));
        assert_eq!(nodes.last().unwrap().t, 1.0);
    }
}
