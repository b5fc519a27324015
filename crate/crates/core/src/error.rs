use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("argument outside the domain of `{op}`: {reason}")]
    Domain { op: &'static str, reason: String },

    #[error(
        "quadrature did not converge on [{a}, {b}] after {subdivisions} subdivisions \
         (estimate {estimate:e}, error bound {error_bound:e})"
    )]
    Quadrature {
        a: f64,
        b: f64,
        estimate: f64,
        error_bound: f64,
        subdivisions: usize,
    },

    #[error("ODE integration failed at t = {t}, y = {y}: {reason}")]
    Ode { t: f64, y: f64, reason: String },

    #[error("band {band} is degenerate: {reason}")]
    DegenerateBand { band: usize, reason: String },

    #[error("partition curve {band} met the curve below it at t = {t}; band mass exhausted")]
    CurveCrossing { band: usize, t: f64 },

    #[error("band {band} is vacuous at t = {t} (occupancy {occupancy:e})")]
    VacuousBand { band: usize, t: f64, occupancy: f64 },

    #[error("record {index} (los {los}) lies beyond the model horizon {horizon}")]
    OutsideHorizon { index: usize, los: f64, horizon: f64 },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("bin pooling left {bins} bins; use fewer bins or more data")]
    Pooling { bins: usize },

    #[error("while building band {band}: {source}")]
    Band {
        band: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: u8,
        #[source]
        source: Box<Error>,
    },

    #[error("model file: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn domain(op: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn in_band(self, band: usize) -> Self {
        match self {
            e @ (Error::Band { .. } | Error::CurveCrossing { .. }) => e,
            e => Error::Band {
                band,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn in_stage(self, stage: u8) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Validation { .. }
            | Error::Domain { .. }
            | Error::DegenerateBand { .. }
            | Error::OutsideHorizon { .. }
            | Error::Schema(_) => ErrorKind::Validation,
            Error::Json(e) if e.is_io() => ErrorKind::Io,
            Error::Json(_) => ErrorKind::Validation,
            Error::Io(_) => ErrorKind::Io,
            Error::Band { source, .. } | Error::Stage { source, .. } => source.kind(),
            _ => ErrorKind::Numerical,
        }
    }
}
