//! Standard-normal helpers on top of `libm::erfc`.

use libm::erfc;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
pub fn std_normal_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    std_normal_log_pdf(z).exp()
}

#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Upper tail `1 - Φ(z)`, accurate far into the right tail.
#[inline]
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Quantile of the standard normal, given the probability split as
/// `lower` (mass below) and `upper` (mass above, `lower + upper = 1`).
/// Passing both tails keeps far-tail quantiles accurate; the root is found
/// by bisection on whichever tail function is smaller.
pub fn std_normal_quantile_split(lower: f64, upper: f64) -> f64 {
    if lower <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if upper <= 0.0 {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    let use_lower = lower <= upper;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let below = if use_lower {
            std_normal_cdf(mid) < lower
        } else {
            std_normal_sf(mid) > upper
        };
        if below {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    std_normal_quantile_split(p, 1.0 - p)
}
