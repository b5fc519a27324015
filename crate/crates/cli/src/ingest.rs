//! Reading `charge,los` CSV files.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, CliResult};

/// Largest share of rows that may be rejected before ingest fails.
pub const MAX_REJECTED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Add Uniform[0, 1) to integer-valued LOS.
    pub jitter: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `(charge, los)` pairs.
    pub records: Vec<(f64, f64)>,
    pub source: PathBuf,
    pub rejected: Vec<Rejection>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn los(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.1).collect()
    }
}

fn parse_field(raw: Option<&str>, name: &str) -> Result<f64, String> {
    let s = raw.map(str::trim).unwrap_or("");
    if s.is_empty() {
        return Err(format!("missing {name}"));
    }
    s.parse::<f64>().map_err(|_| format!("{name} `{s}` is not a number"))
}

/// Reads a CSV with a header containing `charge` and `los`; other columns
/// are ignored and lines starting with `#` are skipped.
pub fn ingest(path: &Path, options: &IngestOptions) -> CliResult<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let data_err = |reason: String| CliError::Data {
        path: path.display().to_string(),
        reason,
    };
    let headers = reader.headers().map_err(|e| data_err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| data_err(format!("missing column `{name}`")))
    };
    let (ci, li) = (col("charge")?, col("los")?);

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(data_err(e.to_string()));
                }
                rejected.push(Rejection {
                    line,
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let parsed = parse_field(row.get(ci), "charge").and_then(|c| {
            let mut los = parse_field(row.get(li), "los")?;
            if options.jitter && los >= 0.0 && los.fract() == 0.0 {
                los += rng.random::<f64>();
            }
            if !(c > 0.0 && c.is_finite()) {
                return Err(format!("charge {c} must be finite and > 0"));
            }
            if !(los > 0.0 && los.is_finite()) {
                return Err(format!("los {los} must be finite and > 0"));
            }
            Ok((c, los))
        });
        match parsed {
            Ok(rec) => records.push(rec),
            Err(reason) => rejected.push(Rejection { line, reason }),
        }
    }

    let total = records.len() + rejected.len();
    if total == 0 {
        return Err(data_err("no data rows".into()));
    }
    if !rejected.is_empty() {
        let report: Vec<String> = rejected
            .iter()
            .map(|r| format!("line {}: {}", r.line, r.reason))
            .collect();
        if rejected.len() as f64 > MAX_REJECTED_FRACTION * total as f64 {
            return Err(data_err(format!(
                "{} of {total} rows rejected:\n  {}",
                rejected.len(),
                report.join("\n  ")
            )));
        }
        for r in &report {
            log::warn!("{}: skipped {r}", path.display());
        }
    }
    Ok(Dataset {
        records,
        source: path.to_path_buf(),
        rejected,
    })
}
