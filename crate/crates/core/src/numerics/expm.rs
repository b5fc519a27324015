//! Row-vector action of the matrix exponential, `v^T exp(S t)`.
//!
//! Metzler matrices (non-negative off-diagonal, which covers every
//! phase-type sub-generator) go through uniformization: all series terms
//! are non-negative, so there is no cancellation. Anything else falls back
//! to scaling-and-squaring of a truncated Taylor series.

use crate::error::{Error, Result};

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Matrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::validation("matrix", "rows must all have length n"));
        }
        Ok(Matrix {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }

    pub fn is_metzler(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| i == j || self.get(i, j) >= 0.0))
    }

    /// `out = v^T * self`
    pub fn left_mul_into(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            let row = &self.data[i * self.n..(i + 1) * self.n];
            for (o, &a) in out.iter_mut().zip(row) {
                *o += vi * a;
            }
        }
    }

    fn matmul(&self, other: &Matrix) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Largest uniformization exponent handled in one chunk; keeps
/// `exp(-q t)` far from underflow.
const MAX_CHUNK_RATE: f64 = 20.0;

/// Uniformized action for a Metzler operator given by `apply(x, out)`
/// computing `out = x^T (I + S/q)`. `q` must dominate every `|S_ii|`.
pub(crate) fn uniformized_action<F>(v: &[f64], t: f64, q: f64, mut apply: F) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = v.len();
    let mut state = v.to_vec();
    if t == 0.0 || q == 0.0 {
        return state;
    }
    let chunks = ((q * t) / MAX_CHUNK_RATE).ceil().max(1.0) as usize;
    let dt = t / chunks as f64;
    let qt = q * dt;
    let mut term = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for _ in 0..chunks {
        let mut weight = (-qt).exp();
        term.copy_from_slice(&state);
        for (a, &x) in acc.iter_mut().zip(&term) {
            *a = weight * x;
        }
        let mut k = 0usize;
        loop {
            k += 1;
            apply(&term, &mut next);
            std::mem::swap(&mut term, &mut next);
            weight *= qt / k as f64;
            for (a, &x) in acc.iter_mut().zip(&term) {
                *a += weight * x;
            }
            // Past the Poisson mode the remaining tail is geometric.
            if k as f64 > qt && weight < 1e-20 {
                break;
            }
            if k > 10_000 {
                break;
            }
        }
        state.copy_from_slice(&acc);
    }
    state
}

fn taylor_expm(m: &Matrix) -> Matrix {
    let n = m.dim();
    let mut result = Matrix::zeros(n);
    let mut term = Matrix::zeros(n);
    for i in 0..n {
        result.set(i, i, 1.0);
        term.set(i, i, 1.0);
    }
    for k in 1..=24 {
        term = term.matmul(m);
        let inv = 1.0 / k as f64;
        term.data.iter_mut().for_each(|x| *x *= inv);
        for (r, &x) in result.data.iter_mut().zip(&term.data) {
            *r += x;
        }
    }
    result
}

/// Returns `v^T exp(S t)`.
pub fn matrix_exp_action(s: &Matrix, t: f64, v: &[f64]) -> Result<Vec<f64>> {
    let n = s.dim();
    if v.len() != n {
        return Err(Error::validation("v", format!("expected length {n}, got {}", v.len())));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::domain(
            "matrix_exp_action",
            format!("t must be finite and >= 0, got {t}"),
        ));
    }
    if s.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation("S", "entries must be finite"));
    }
    if n == 0 || t == 0.0 || s.data.iter().all(|&x| x == 0.0) {
        return Ok(v.to_vec());
    }

    if s.is_metzler() {
        let q = (0..n).map(|i| s.get(i, i).abs()).fold(0.0, f64::max);
        if q == 0.0 {
            // Zero diagonal: shift so uniformization has a positive rate.
            let shift = s.norm1().max(1.0);
            let shifted = shifted(s, shift);
            let out = matrix_exp_action(&shifted, t, v)?;
            let scale = (shift * t).exp();
            return Ok(out.into_iter().map(|x| x * scale).collect());
        }
        let mut p = s.clone();
        for i in 0..n {
            for j in 0..n {
                let val = s.get(i, j) / q + if i == j { 1.0 } else { 0.0 };
                p.set(i, j, val);
            }
        }
        return Ok(uniformized_action(v, t, q, |x, out| p.left_mul_into(x, out)));
    }

    let mut m = s.clone();
    m.data.iter_mut().for_each(|x| *x *= t);
    let norm = m.norm1();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scale = 0.5f64.powi(squarings);
    m.data.iter_mut().for_each(|x| *x *= scale);
    let mut e = taylor_expm(&m);
    for _ in 0..squarings {
        e = e.matmul(&e);
    }
    let mut out = vec![0.0; n];
    e.left_mul_into(v, &mut out);
    Ok(out)
}

fn shifted(s: &Matrix, shift: f64) -> Matrix {
    let mut out = s.clone();
    for i in 0..s.dim() {
        out.set(i, i, s.get(i, i) - shift);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Term-by-term Taylor series of `v^T (S t)^k / k!`, summed until the
    /// terms vanish. Independent of both production paths.
    fn taylor_oracle(s: &Matrix, t: f64, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut term = v.to_vec();
        let mut acc = v.to_vec();
        let mut next = vec![0.0; n];
        for k in 1..200 {
            s.left_mul_into(&term, &mut next);
            for x in next.iter_mut() {
                *x *= t / k as f64;
            }
            std::mem::swap(&mut term, &mut next);
            for (a, &x) in acc.iter_mut().zip(&term) {
                *a += x;
            }
            if term.iter().all(|x| x.abs() < 1e-30) {
                break;
            }
        }
        acc
    }

    fn random_bidiagonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let mut s = Matrix::zeros(n);
        for i in 0..n {
            let up = if i + 1 < n { rng.random_range(0.1..2.0) } else { 0.0 };
            let exit = rng.random_range(0.1..2.0);
            s.set(i, i, -(up + exit));
            if i + 1 < n {
                s.set(i, i + 1, up);
            }
        }
        s
    }

    #[test]
    fn zero_and_scalar_generators() {
        let z = Matrix::from_rows(&[vec![0.0]]).unwrap();
        assert_eq!(matrix_exp_action(&z, 5.0, &[1.0]).unwrap(), vec![1.0]);
        let m = Matrix::from_rows(&[vec![-1.0]]).unwrap();
        let got = matrix_exp_action(&m, 1.0, &[1.0]).unwrap()[0];
        assert!((got - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn bidiagonal_matches_taylor_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = random_bidiagonal(&mut rng, 4);
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let got = matrix_exp_action(&s, 2.0, &v).unwrap();
            let want = taylor_oracle(&s, 2.0, &v);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9 * w.abs().max(1e-3), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn non_metzler_path_matches_taylor_oracle() {
        let s = Matrix::from_rows(&[vec![-0.5, -0.3, 0.2], vec![0.1, -1.0, -0.4], vec![0.3, 0.2, -0.7]]).unwrap();
        let v = [0.2, -0.5, 1.0];
        let got = matrix_exp_action(&s, 1.7, &v).unwrap();
        let want = taylor_oracle(&s, 1.7, &v);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-11, "{g} vs {w}");
        }
    }

    #[test]
    fn long_horizons_do_not_underflow_prematurely() {
        // exp(-15.5 * 73) ~ 1e-491 underflows; exp(-0.14 * 73) must survive.
        let s = Matrix::from_rows(&[vec![-15.5, 6.45], vec![0.0, -0.14]]).unwrap();
        let got = matrix_exp_action(&s, 73.0, &[0.0, 1.0]).unwrap();
        assert!((got[1] - (-0.14f64 * 73.0).exp()).abs() < 1e-12 * got[1]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = Matrix::from_rows(&[vec![-1.0]]).unwrap();
        assert!(matrix_exp_action(&m, -1.0, &[1.0]).is_err());
        assert!(matrix_exp_action(&m, 1.0, &[1.0, 2.0]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn semigroup_property(seed in 0u64..1000, t1 in 0.0f64..3.0, t2 in 0.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(1..=5);
            let s = random_bidiagonal(&mut rng, n);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let direct = matrix_exp_action(&s, t1 + t2, &v).unwrap();
            let mid = matrix_exp_action(&s, t1, &v).unwrap();
            let composed = matrix_exp_action(&s, t2, &mid).unwrap();
            for (a, b) in direct.iter().zip(&composed) {
                proptest::prop_assert!((a - b).abs() < 1e-8);
            }
        }
    }
}
