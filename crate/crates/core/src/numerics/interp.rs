//! Shape-preserving (Fritsch–Carlson / PCHIP) cubic Hermite interpolation.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn edge_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if sign(d) != sign(d0) {
        0.0
    } else if sign(d0) != sign(d1) && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

impl MonotoneCubic {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::validation("interpolant", "need >= 2 matching nodes"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::validation("interpolant", "abscissae must strictly increase"));
        }
        if ys.iter().chain(&xs).any(|v| !v.is_finite()) {
            return Err(Error::validation("interpolant", "nodes must be finite"));
        }
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes[0] = delta[0];
            slopes[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                let (d0, d1) = (delta[k - 1], delta[k]);
                if d0 * d1 <= 0.0 {
                    slopes[k] = 0.0;
                } else {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    slopes[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
                }
            }
            slopes[0] = edge_slope(h[0], h[1], delta[0], delta[1]);
            slopes[n - 1] = edge_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(MonotoneCubic { xs, ys, slopes })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn x_min(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_max(&self) -> f64 {
        self.xs[self.xs.len() - 1]
    }

    fn segment(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|p| p.total_cmp(&x)) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.xs.len() - 2),
        }
    }

    #[inline]
    fn hermite(&self, k: usize, x: f64) -> f64 {
        let h = self.xs[k + 1] - self.xs[k];
        let s = (x - self.xs[k]) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.ys[k] + h10 * h * self.slopes[k] + h01 * self.ys[k + 1] + h11 * h * self.slopes[k + 1]
    }

    #[inline]
    fn hermite_derivative(&self, k: usize, x: f64) -> f64 {
        let h = self.xs[k + 1] - self.xs[k];
        let s = (x - self.xs[k]) / h;
        let s2 = s * s;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        d00 * self.ys[k] + d10 * self.slopes[k] + d01 * self.ys[k + 1] + d11 * self.slopes[k + 1]
    }

    /// Value at `x`, clamped to the node range.
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(self.x_min(), self.x_max());
        self.hermite(self.segment(x), x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let x = x.clamp(self.x_min(), self.x_max());
        self.hermite_derivative(self.segment(x), x)
    }

    /// For strictly decreasing data: the `x` with `eval(x) == y`, or `None`
    /// when `y` is outside the interpolated range.
    pub fn inverse_decreasing(&self, y: f64) -> Option<f64> {
        let n = self.ys.len();
        if y > self.ys[0] || y < self.ys[n - 1] || y.is_nan() {
            return None;
        }
        // First node whose value is <= y; the root lies in the segment before it.
        let idx = self.ys.partition_point(|&v| v > y);
        if idx == 0 {
            return Some(self.xs[0]);
        }
        if self.ys[idx] == y {
            // Walk left over flat runs so ties resolve to the earliest time.
            let mut j = idx;
            while j > 0 && self.ys[j - 1] == y {
                j -= 1;
            }
            return Some(self.xs[j]);
        }
        let k = idx - 1;
        let (mut lo, mut hi) = (self.xs[k], self.xs[k + 1]);
        let mut x = lo + (hi - lo) * (self.ys[k] - y) / (self.ys[k] - self.ys[k + 1]);
        for _ in 0..100 {
            let r = self.hermite(k, x) - y;
            if r == 0.0 {
                return Some(x);
            }
            if r > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.hermite_derivative(k, x);
            let newton = x - r / d;
            x = if d < 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 4.0 * f64::EPSILON * hi.abs().max(1.0) {
                break;
            }
        }
        Some(x)
    }
}
