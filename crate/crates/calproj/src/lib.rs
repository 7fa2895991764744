//! Calibrated-projection confidence intervals for projections and smooth
//! functions of partially identified parameters in moment (in)equality models.
//!
//! The crate has three layers:
//!
//! * model definitions and studentized sample moments ([`moment`]), with
//!   built-in entry-game data-generating processes ([`entry`]);
//! * the bootstrap critical-level calibration, which repeatedly checks
//!   feasibility of small linear programs ([`critical`], [`linprog`]);
//! * a surrogate-assisted global optimizer that finds the interval endpoints
//!   by maximizing a feasibility-weighted expected improvement ([`surrogate`],
//!   [`eam`]).
//!
//! A Monte Carlo harness and the CLI front door live in [`harness`].

pub mod dataset;
pub mod eam;
pub mod entry;
pub mod gms;
pub mod harness;
pub mod linprog;
pub mod moment;
pub mod stats;
pub mod surrogate;

pub mod critical;

mod bvn;

pub use bvn::{bvn_cdf, bvn_rect};
pub use critical::{
    as_projection_critical, bootstrap_ensemble, critical_level, one_sided_critical, rho_from_eta,
    BootstrapEnsemble, BootstrapMode, CriticalLevel, CriticalParams, Projection,
};
pub use dataset::Dataset;
pub use eam::{
    confidence_interval, confidence_interval_joint, confidence_interval_smooth, CiMode, CiOptions,
    CiResult, EamOptions, EamState,
};
pub use entry::{EntryDgp, EntryGameSpec};
pub use gms::{GmsConfig, GmsKind};
pub use linprog::{LinearSystem, LpOutcome};
pub use moment::{Evaluator, MomentModel, SampleMoments};
pub use surrogate::{Kernel, KrigingModel};

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A moment has zero sample variance at the requested parameter value, so
    /// studentization is undefined (the model violates the positive-variance
    /// requirement there).
    #[error("degenerate moment {j}: zero sample variance at theta")]
    DegenerateMoment { j: usize },

    /// The simplex iteration cap was hit; the verdict would be unreliable.
    #[error("simplex stall: iteration cap {cap} exceeded")]
    SimplexStall { cap: usize },

    /// The surrogate correlation matrix stayed non positive definite after
    /// escalating the nugget to its maximum.
    #[error("ill-conditioned surrogate: correlation matrix not PD at nugget {nugget:e}")]
    IllConditionedSurrogate { nugget: f64 },

    /// Invalid user input (dimension mismatches, bad configuration fields).
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
