//! Coxian phase-type length-of-stay models converted into joint
//! charge / length-of-stay models with deterministic charge growth.
//!
//! The pipeline: fit phase-type parameters to stays ([`estimation`]),
//! convert them into partition curves and band survival functions
//! ([`converter`]), then price bands ([`pricing`]), simulate cohorts
//! ([`simulation`]) and check fits ([`gof`]).
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod converter;
pub mod error;
pub mod estimation;
pub mod fixtures;
pub mod gof;
pub mod numerics;
pub mod phase_type;
pub mod pricing;
pub mod rgrst;
pub mod simulation;

pub use converter::{
    construct_rho, construct_rho_with, initial_cutpoints, joint_pdf, marginal_los_pdf, ConstructionSpec, FittedModel,
    ModelDocument, PartitionCurves, PiecewiseRho,
};
pub use error::{Error, ErrorKind, Result};
pub use estimation::{stage1_fit, stage2_fit, two_stage_fit, Stage1Result, Stage2Result, TwoStageFit};
pub use gof::{chi2_joint, chi2_marginal, kde_2d, BinMode, BinningSpec, GofReport};
pub use numerics::{OdeSpec, OptimizerSpec, QuadratureSpec};
pub use phase_type::{build_generator, cph_cdf, cph_pdf, cph_sample, phase_occupancy, CphParams, SubGenerator};
pub use pricing::{price, price_table, PriceCurve};
pub use rgrst::{flow, flow_inverse, initial_pdf, potential_pdf, GrowthModel, LognormalParams};
pub use simulation::{simulate_cohort, simulate_patient, CohortRecord};

/// Library version, embedded in output artifacts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
