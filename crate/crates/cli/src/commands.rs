//! The `fit`, `simulate`, `price`, `gof` and `grid` commands. Each command
//! computes every artifact in memory before writing any of them.

use std::path::{Path, PathBuf};

use phaseprice_core::estimation::{two_stage_fit, Stage1Result, Stage2Result};
use phaseprice_core::gof::{self, chi2_binned, chi2_joint_binned, GofReport};
use phaseprice_core::pricing::{price_table, write_price_csv};
use phaseprice_core::simulation::{simulate_cohort, write_cohort_csv, write_paths_json};
use phaseprice_core::{FittedModel, VERSION};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest, Dataset, IngestOptions};

/// An output file held in memory until the command succeeds.
pub struct Artifact {
    pub name: &'static str,
    pub bytes: Vec<u8>,
}

fn provenance(cfg: &RunConfig) -> String {
    format!("# phaseprice {VERSION} config_hash={}\n", cfg.hash())
}

fn csv_artifact<F>(cfg: &RunConfig, name: &'static str, write: F) -> CliResult<Artifact>
where
    F: FnOnce(&mut Vec<u8>) -> phaseprice_core::Result<()>,
{
    let mut bytes = provenance(cfg).into_bytes();
    write(&mut bytes)?;
    Ok(Artifact { name, bytes })
}

fn json_artifact<T: Serialize>(name: &'static str, value: &T) -> CliResult<Artifact> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(phaseprice_core::Error::from)?;
    bytes.push(b'\n');
    Ok(Artifact { name, bytes })
}

/// Writes all artifacts into `out`, creating it if needed.
pub fn write_artifacts(out: &Path, artifacts: &[Artifact]) -> CliResult<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    artifacts
        .iter()
        .map(|a| {
            let path = out.join(a.name);
            std::fs::write(&path, &a.bytes).map_err(|e| CliError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

pub fn load_model(path: &Path) -> CliResult<FittedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(FittedModel::from_json(&text)?)
}

fn load_data(cfg: &RunConfig, path: &Path) -> CliResult<Dataset> {
    ingest(
        path,
        &IngestOptions {
            jitter: cfg.jitter,
            seed: cfg.seed,
        },
    )
}

fn model_artifact(cfg: &RunConfig, model: &FittedModel) -> CliResult<Artifact> {
    let mut doc = model.to_document();
    doc.version = Some(VERSION.to_string());
    doc.config_hash = Some(cfg.hash());
    json_artifact("model.json", &doc)
}

#[derive(Serialize)]
struct FitReport<'a> {
    version: &'static str,
    config_hash: String,
    source: String,
    records: usize,
    n: usize,
    stage1: &'a Stage1Result,
    stage2: &'a Stage2Result,
}

pub fn cmd_fit(cfg: &RunConfig, data: &Path) -> CliResult<Vec<Artifact>> {
    let dataset = load_data(cfg, data)?;
    let optimizer = phaseprice_core::OptimizerSpec {
        seed: cfg.seed,
        ..cfg.optimizer
    };
    let fit = two_stage_fit(&dataset.records, cfg.n, &optimizer, &cfg.construction)?;
    let report = FitReport {
        version: VERSION,
        config_hash: cfg.hash(),
        source: dataset.source.display().to_string(),
        records: dataset.len(),
        n: cfg.n,
        stage1: &fit.stage1,
        stage2: &fit.stage2,
    };
    Ok(vec![
        json_artifact("fit_report.json", &report)?,
        model_artifact(cfg, fit.model())?,
    ])
}

pub fn cmd_simulate(cfg: &RunConfig, model: &FittedModel, paths: bool) -> CliResult<Vec<Artifact>> {
    let cohort = simulate_cohort(model, cfg.cohort_size, cfg.seed)?;
    let mut out = vec![csv_artifact(cfg, "cohort.csv", |w| write_cohort_csv(&cohort, w))?];
    if paths {
        let mut bytes = Vec::new();
        write_paths_json(&cohort, &mut bytes)?;
        out.push(Artifact {
            name: "paths.json",
            bytes,
        });
    }
    Ok(out)
}

pub fn cmd_price(cfg: &RunConfig, model: &FittedModel) -> CliResult<Vec<Artifact>> {
    let grid = cfg.price_grid.points();
    if let Some(t) = grid.iter().find(|&&t| t > model.horizon()) {
        return Err(CliError::Usage(format!(
            "price grid time {t} exceeds the model horizon {}",
            model.horizon()
        )));
    }
    let table = price_table(model, &grid)?;
    for curve in &table {
        if !curve.is_nondecreasing() {
            log::info!("price curve of band {} is not monotone over the grid", curve.band);
        }
    }
    Ok(vec![csv_artifact(cfg, "prices.csv", |w| write_price_csv(&table, w))?])
}

#[derive(Serialize)]
struct GofOutput {
    version: &'static str,
    config_hash: String,
    records: usize,
    los: GofReport,
    log_charge: GofReport,
    joint: GofReport,
}

pub fn cmd_gof(cfg: &RunConfig, model: &FittedModel, data: &Path) -> CliResult<Vec<Artifact>> {
    let dataset = load_data(cfg, data)?;
    let los: Vec<f64> = dataset.los();
    let log_charge: Vec<f64> = dataset.records.iter().map(|r| r.0.ln()).collect();
    let los_bins = gof::los_bins(model, &cfg.binning)?;
    let charge_bins = gof::log_charge_bins(model, &cfg.binning)?;
    let joint_bins = gof::joint_bins(model, &cfg.joint_binning)?;
    let report = GofOutput {
        version: VERSION,
        config_hash: cfg.hash(),
        records: dataset.len(),
        los: chi2_binned(&los, &los_bins, cfg.binning.min_expected)?,
        log_charge: chi2_binned(&log_charge, &charge_bins, cfg.binning.min_expected)?,
        joint: chi2_joint_binned(&dataset.records, &joint_bins, cfg.joint_binning.min_expected)?,
    };
    Ok(vec![json_artifact("gof_report.json", &report)?])
}

pub fn cmd_grid(cfg: &RunConfig, model: &FittedModel, data: Option<&Path>) -> CliResult<Vec<Artifact>> {
    let lp = model.lognormal();
    let (t_lo, t_hi) = cfg.grid.los.unwrap_or((0.0, model.horizon().min(30.0)));
    let (x_lo, x_hi) = cfg
        .grid
        .log_charge
        .unwrap_or((lp.mu - 4.0 * lp.sigma, lp.mu + 4.0 * lp.sigma + t_hi));
    let xs = gof::linspace(x_lo, x_hi, cfg.grid.points.0);
    let ys = gof::linspace(t_lo, t_hi, cfg.grid.points.1);
    let surface = gof::model_density_grid(model, &xs, &ys);
    let mut out = vec![csv_artifact(cfg, "model_grid.csv", |w| surface.write_csv(w))?];
    if let Some(path) = data {
        let dataset = load_data(cfg, path)?;
        let points: Vec<(f64, f64)> = dataset.records.iter().map(|r| (r.0.ln(), r.1)).collect();
        let kde = gof::kde_2d(&points, cfg.grid.bandwidths, &xs, &ys)?;
        out.push(csv_artifact(cfg, "kde_grid.csv", |w| kde.write_csv(w))?);
    }
    Ok(out)
}
