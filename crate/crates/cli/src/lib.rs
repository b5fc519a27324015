//! Library side of the `phaseprice` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "phaseprice",
    version,
    about = "Fit, simulate and price phase-type charge / length-of-stay models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-stage maximum-likelihood fit of a `charge,los` CSV.
    Fit(CommonArgs),
    /// Simulate a cohort from a fitted model.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Also write band paths to paths.json.
        #[arg(long)]
        paths: bool,
    },
    /// Per-band price curves over the configured time grid.
    Price(CommonArgs),
    /// Chi-square goodness of fit of data against a model.
    Gof(CommonArgs),
    /// Model joint-density surface (and a KDE of --data if given).
    Grid(CommonArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV with `charge` and `los` columns.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of phases for `fit`.
    #[arg(long)]
    pub n: Option<usize>,
    /// Jitter integer-valued stays by Uniform[0, 1) days on ingest.
    #[arg(long)]
    pub jitter: bool,
    /// Cohort size for `simulate`.
    #[arg(long)]
    pub size: Option<usize>,
}

impl CommonArgs {
    /// Loads the config file (or defaults) and applies flag overrides.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(size) = self.size {
            cfg.cohort_size = size;
        }
        if self.jitter {
            cfg.jitter = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn need<'a>(opt: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a PathBuf> {
        opt.as_ref()
            .ok_or_else(|| CliError::Usage(format!("--{flag} is required for this command")))
    }
}

/// Runs a parsed command and returns the paths written.
pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let (common, artifacts) = match &cli.command {
        Command::Fit(a) => {
            let cfg = a.resolve()?;
            let data = CommonArgs::need(&a.data, "data")?;
            (a, commands::cmd_fit(&cfg, data)?)
        }
        Command::Simulate { common: a, paths } => {
            let cfg = a.resolve()?;
            let model = commands::load_model(CommonArgs::need(&a.model, "model")?)?;
            (a, commands::cmd_simulate(&cfg, &model, *paths)?)
        }
        Command::Price(a) => {
            let cfg = a.resolve()?;
            let model = commands::load_model(CommonArgs::need(&a.model, "model")?)?;
            (a, commands::cmd_price(&cfg, &model)?)
        }
        Command::Gof(a) => {
            let cfg = a.resolve()?;
            let model = commands::load_model(CommonArgs::need(&a.model, "model")?)?;
            let data = CommonArgs::need(&a.data, "data")?;
            (a, commands::cmd_gof(&cfg, &model, data)?)
        }
        Command::Grid(a) => {
            let cfg = a.resolve()?;
            let model = commands::load_model(CommonArgs::need(&a.model, "model")?)?;
            (a, commands::cmd_grid(&cfg, &model, a.data.as_deref())?)
        }
    };
    commands::write_artifacts(&common.out, &artifacts)
}
