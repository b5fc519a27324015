//! Globally adaptive Gauss–Kronrod (10/21-point) quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-8,
            abs_tol: 1e-14,
            max_subdivisions: 200,
        }
    }
}

impl QuadratureSpec {
    /// Purely relative accuracy. Model integrals can be legitimately tiny
    /// (deep-survival bands), so an absolute floor would swamp them.
    pub fn relative(rel_tol: f64) -> Self {
        QuadratureSpec {
            rel_tol,
            abs_tol: 0.0,
            max_subdivisions: 400,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::validation("quadrature.rel_tol", "must be > 0"));
        }
        if !(self.abs_tol >= 0.0) {
            return Err(Error::validation("quadrature.abs_tol", "must be >= 0"));
        }
        if self.rel_tol == 0.0 && self.abs_tol == 0.0 {
            return Err(Error::validation("quadrature", "tolerances must be > 0"));
        }
        if self.max_subdivisions < 1 {
            return Err(Error::validation("quadrature.max_subdivisions", "must be >= 1"));
        }
        Ok(())
    }
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_980_380_186,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    for j in 0..10 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Segment { a, b, value, error }
}

/// Integrates `f` over `[a, b]` to `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    integrate_with_breaks(f, &[a, b], spec)
}

/// Like [`integrate`], with the initial partition given by `points`
/// (ascending, first and last are the limits). Kinks of the integrand
/// belong in `points`.
pub fn integrate_with_breaks<F>(mut f: F, points: &[f64], spec: &QuadratureSpec) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    if points.len() < 2 {
        return Err(Error::domain("integrate", "need at least two limits"));
    }
    let a = points[0];
    let b = points[points.len() - 1];
    if !(a <= b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::domain(
            "integrate",
            format!("limits must be finite with a <= b (got [{a}, {b}])"),
        ));
    }
    if a == b {
        return Ok(0.0);
    }

    let mut segments: Vec<Segment> = Vec::with_capacity(points.len() + 16);
    for w in points.windows(2) {
        if w[1] < w[0] {
            return Err(Error::domain("integrate", "break points must ascend"));
        }
        if w[1] > w[0] {
            segments.push(gk21(&mut f, w[0], w[1]));
        }
    }

    let mut subdivisions = segments.len();
    loop {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let err: f64 = segments.iter().map(|s| s.error).sum();
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::Quadrature {
                a,
                b,
                estimate: total,
                error_bound: err,
                subdivisions,
            });
        }
        let target = spec.abs_tol.max(spec.rel_tol * total.abs());
        if err <= target {
            return Ok(total);
        }
        if subdivisions >= spec.max_subdivisions {
            return Err(Error::Quadrature {
                a,
                b,
                estimate: total,
                error_bound: err,
                subdivisions,
            });
        }
        // Bisect the worst segment.
        let (worst, _) = segments.iter().enumerate().fold(
            (0, -1.0),
            |acc, (i, s)| if s.error > acc.1 { (i, s.error) } else { acc },
        );
        let s = segments.swap_remove(worst);
        let mid = 0.5 * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            // Interval cannot be split further in floating point.
            return Err(Error::Quadrature {
                a,
                b,
                estimate: total,
                error_bound: err,
                subdivisions,
            });
        }
        segments.push(gk21(&mut f, s.a, mid));
        segments.push(gk21(&mut f, mid, s.b));
        subdivisions += 1;
    }
}
