//! Run configuration: a JSON file whose every field has a default, with
//! command-line flags applied on top.

use std::path::Path;

use phaseprice_core::{BinningSpec, ConstructionSpec, OptimizerSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Number of phases fitted by `fit`.
    pub n: usize,
    pub seed: u64,
    pub optimizer: OptimizerSpec,
    pub construction: ConstructionSpec,
    pub binning: BinningSpec,
    pub joint_binning: BinningSpec,
    /// Add Uniform[0, 1) days to integer-valued stays on ingest.
    pub jitter: bool,
    pub cohort_size: usize,
    pub price_grid: TimeGrid,
    pub grid: GridConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n: 4,
            seed: 0,
            optimizer: OptimizerSpec::default(),
            construction: ConstructionSpec::default(),
            binning: BinningSpec::default(),
            joint_binning: BinningSpec::joint(),
            jitter: false,
            cohort_size: 5000,
            price_grid: TimeGrid::default(),
            grid: GridConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeGrid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid {
            start: 1.0,
            end: 30.0,
            step: 1.0,
        }
    }
}

impl TimeGrid {
    pub fn points(&self) -> Vec<f64> {
        let count = ((self.end - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.start + self.step * i as f64).collect()
    }
}

/// Plotting grid over (log-charge, LOS). Unset ranges are derived from the
/// model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub log_charge: Option<(f64, f64)>,
    pub los: Option<(f64, f64)>,
    pub points: (usize, usize),
    pub bandwidths: (f64, f64),
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            log_charge: None,
            los: None,
            points: (50, 50),
            bandwidths: phaseprice_core::gof::DEFAULT_BANDWIDTHS,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        let wrap = |e: phaseprice_core::Error| CliError::Config(e.to_string());
        if self.n < 1 {
            return Err(CliError::Config("`n` must be >= 1".into()));
        }
        if self.cohort_size < 1 {
            return Err(CliError::Config("`cohort_size` must be >= 1".into()));
        }
        let g = &self.price_grid;
        if !(g.step > 0.0 && g.start >= 0.0 && g.end >= g.start) {
            return Err(CliError::Config(
                "`price_grid` needs 0 <= start <= end and step > 0".into(),
            ));
        }
        if self.grid.points.0 < 2 || self.grid.points.1 < 2 {
            return Err(CliError::Config("`grid.points` must be >= 2 in each dimension".into()));
        }
        if !(self.grid.bandwidths.0 > 0.0 && self.grid.bandwidths.1 > 0.0) {
            return Err(CliError::Config("`grid.bandwidths` must be > 0".into()));
        }
        self.optimizer.validate().map_err(wrap)?;
        self.construction.validate().map_err(wrap)?;
        self.binning.validate().map_err(wrap)?;
        self.joint_binning.validate().map_err(wrap)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
