//! Likelihood-free parameter estimation by nested multi-timescale stochastic
//! approximation.
//!
//! A fast recursion tracks the per-observation score `∇_θ log p(y; θ)` from
//! unbiased GLR estimates of the density and its gradient, and a slow,
//! projected recursion climbs the log-likelihood (MLE) or a reparameterized
//! evidence lower bound (posterior density estimation). The plug-in ratio
//! baseline is available for comparison.

pub mod error;
pub mod glr;
pub mod harness;
pub mod mle;
pub mod models;
pub mod pde;
pub mod rates;
pub mod record;
pub mod rng;
pub mod sa;

pub use error::{Error, Result};
pub use glr::{BatchEstimate, BatchEstimator, G1Reading, GlrSample, ModelDerivatives};
pub use mle::{run_mle, run_mle_with, MleConfig, MleDriver, MleState};
pub use models::{AnalyticOracle, LinearLatentModel, LocationModel, ModelId, ObservationSet, StochasticModel};
pub use pde::{run_pde, run_pde_with, GaussianVariational, OuterSamples, PdeConfig, PdeDriver, PdeState};
pub use rates::{aggregate_mae, loglog_slope, plateau_level, ErrorSeries, SlopeFit};
pub use record::{CheckpointSpec, Metric, MleRow, PdeRow, RunRecord, Variant};
pub use sa::{BoxDomain, ProjectionResult, ScheduleKind, StepSchedule};
