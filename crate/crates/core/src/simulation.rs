//! Monte-Carlo cohorts from a fitted model. Each patient's charge grows
//! deterministically along `y0 * e^s`; the band changes when the trajectory
//! crosses a partition curve, and discharge happens at the band's hazard.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::converter::FittedModel;
use crate::error::{Error, Result};

const SHARD: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    /// Initial charge.
    pub y0: f64,
    /// Length of stay.
    pub t: f64,
    /// Total charge `y0 * e^t`.
    pub y: f64,
    /// `(band, entry time)` for every band visited, starting at time 0.
    pub path: Vec<(usize, f64)>,
}

impl CohortRecord {
    /// Band occupied at time `s`, or `None` once discharged.
    pub fn band_at(&self, s: f64) -> Option<usize> {
        if s >= self.t {
            return None;
        }
        self.path.iter().rev().find(|(_, entry)| *entry <= s).map(|(b, _)| *b)
    }
}

/// Band containing `(y, t)`; ties go to the upper band.
pub fn band_of(m: &FittedModel, y: f64, t: f64) -> usize {
    m.band_of(y, t)
}

/// Patient with standardized initial charge `z0`, discharged once the
/// accumulated hazard reaches `-ln(1 - u)`.
pub fn simulate_from(m: &FittedModel, z0: f64, u: f64) -> CohortRecord {
    let c = m.params().c();
    let n = m.n();
    let curves = m.curves();
    let mut band = curves.start_band(z0);
    let mut path = vec![(band, 0.0)];
    let mut budget = -(-u).ln_1p();
    let mut s = 0.0;
    let t = loop {
        let next = if band < n { curves.entry_time(band, z0) } else { None };
        let rate = c[band - 1];
        match next {
            Some(cross) if budget > rate * (cross - s) => {
                budget -= rate * (cross - s);
                s = cross;
                band += 1;
                path.push((band, s));
            }
            _ => break s + budget / rate,
        }
    };
    let y0 = m.charge_at(z0, 0.0);
    CohortRecord {
        y0,
        t,
        y: y0 * t.exp(),
        path,
    }
}

pub fn simulate_patient<R: Rng + ?Sized>(m: &FittedModel, rng: &mut R) -> CohortRecord {
    let z0: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    simulate_from(m, z0, u)
}

/// `size` patients, deterministic in `seed` regardless of thread count:
/// fixed-size shards each draw from their own stream of the seeded RNG.
pub fn simulate_cohort(m: &FittedModel, size: usize, seed: u64) -> Result<Vec<CohortRecord>> {
    if size == 0 {
        return Err(Error::validation("size", "cohort size must be >= 1"));
    }
    let shards = size.div_ceil(SHARD);
    let records: Vec<CohortRecord> = (0..shards)
        .into_par_iter()
        .flat_map_iter(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let count = SHARD.min(size - k * SHARD);
            (0..count)
                .map(move |_| simulate_patient(m, &mut rng))
                .collect::<Vec<_>>()
        })
        .collect();
    let beyond = records.iter().filter(|r| r.t > m.horizon()).count();
    if beyond > 0 {
        log::warn!(
            "{beyond} of {size} simulated stays exceed the model horizon {}; their last band was held fixed",
            m.horizon()
        );
    }
    Ok(records)
}

/// Writes the cohort as `charge,los` rows.
pub fn write_cohort_csv<W: Write>(records: &[CohortRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(["charge", "los"]).map_err(io)?;
    for r in records {
        w.write_record([r.y.to_string(), r.t.to_string()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct PathEntry<'a> {
    y0: f64,
    los: f64,
    path: &'a [(usize, f64)],
}

/// Writes band paths as a JSON array of `{y0, los, path: [[band, entry], ...]}`.
pub fn write_paths_json<W: Write>(records: &[CohortRecord], out: W) -> Result<()> {
    let entries: Vec<PathEntry> = records
        .iter()
        .map(|r| PathEntry {
            y0: r.y0,
            los: r.t,
            path: &r.path,
        })
        .collect();
    serde_json::to_writer(out, &entries)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::construct_rho;
    use crate::fixtures;
    use crate::phase_type::{phase_occupancy, CphParams};
    use crate::rgrst::LognormalParams;
    use std::sync::OnceLock;

    fn reference() -> &'static FittedModel {
        static M: OnceLock<FittedModel> = OnceLock::new();
        M.get_or_init(|| {
            let (p, lp) = fixtures::reference_four_phase();
            construct_rho(&p, &lp).unwrap()
        })
    }

    fn two_band() -> FittedModel {
        let p = CphParams::new(vec![0.5, 0.5], vec![1.0], vec![1.0, 2.0]).unwrap();
        construct_rho(&p, &LognormalParams::new(0.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn cohort_validation_and_determinism() {
        let m = two_band();
        assert!(simulate_cohort(&m, 0, 1).is_err());
        let a = simulate_cohort(&m, 5000, 42).unwrap();
        let b = simulate_cohort(&m, 5000, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_cohort(&m, 5000, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn record_invariants() {
        let m = reference();
        for r in simulate_cohort(m, 20_000, 7).unwrap() {
            assert!(((r.y - r.y0 * r.t.exp()) / r.y).abs() < 1e-12);
            assert!(r.path.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1));
            assert!(r.path.last().unwrap().1 <= r.t);
            for &(b, s) in &r.path {
                assert_eq!(band_of(m, r.y0 * s.exp(), s), b, "entry at s={s}");
            }
        }
    }

    #[test]
    fn single_band_los_is_exponential() {
        let p = CphParams::new(vec![1.0], vec![], vec![1.7]).unwrap();
        let m = construct_rho(&p, &LognormalParams::new(0.0, 1.0).unwrap()).unwrap();
        let cohort = simulate_cohort(&m, 100_000, 3).unwrap();
        let mean = cohort.iter().map(|r| r.t).sum::<f64>() / cohort.len() as f64;
        // sd of the mean: (1/1.7)/sqrt(1e5)
        assert!((mean - 1.0 / 1.7).abs() < 4.0 * (1.0 / 1.7) / 316.2);
    }

    #[test]
    fn piecewise_exponential_survival() {
        let m = two_band();
        // A start just below the first curve crosses it at a known time.
        let s1 = 0.8;
        let z0 = m.curves().z(1, s1);
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let times: Vec<f64> = (0..draws).map(|_| simulate_from(&m, z0, rng.random()).t).collect();
        for &s in &[0.3, 0.8, 1.2, 2.0] {
            let want = if s < s1 {
                (-s).exp()
            } else {
                (-s1 - 2.0 * (s - s1)).exp()
            };
            let got = times.iter().filter(|&&t| t > s).count() as f64 / draws as f64;
            let se = (want * (1.0 - want) / draws as f64).sqrt();
            assert!((got - want).abs() < 4.0 * se, "s={s}: {got} vs {want}");
        }
    }

    #[test]
    fn occupancy_matches_phase_type() {
        let p = CphParams::new(vec![0.4, 0.3, 0.3], vec![1.2, 0.7], vec![0.5, 0.9, 0.3]).unwrap();
        let m = construct_rho(&p, &LognormalParams::new(0.0, 1.0).unwrap()).unwrap();
        let n = 100_000;
        let cohort = simulate_cohort(&m, n, 19).unwrap();
        for &t in &[1.0, 5.0, 10.0] {
            let want = phase_occupancy(&p, t);
            for b in 1..=3 {
                let got = cohort.iter().filter(|r| r.band_at(t) == Some(b)).count() as f64 / n as f64;
                let se = (want[b - 1] * (1.0 - want[b - 1]) / n as f64).sqrt();
                assert!(
                    (got - want[b - 1]).abs() < 3.0 * se.max(1e-6),
                    "t={t} band {b}: {got} vs {}",
                    want[b - 1]
                );
            }
        }
    }

    #[test]
    fn csv_and_paths_output() {
        let m = two_band();
        let cohort = simulate_cohort(&m, 3, 1).unwrap();
        let mut buf = Vec::new();
        write_cohort_csv(&cohort, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("charge,los"));
        assert_eq!(text.lines().count(), 4);
        let mut buf = Vec::new();
        write_paths_json(&cohort, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 3);
    }
}
