//! Multiprecision power-series integration of autonomous quadratic ODE
//! systems `X' = A X + Phi(X)`, with backward-time verification, Poincaré
//! recurrence scanning and Lyapunov spectra over the extended variational
//! system.
//!
//! Every computation runs at a user-chosen mantissa width (see
//! [`precision::PrecisionContext`]); values cross file and process
//! boundaries as decimal strings so nothing is lost to `f64`.

pub mod cli;
pub mod error;
pub mod integrator;
mod limb128;
pub mod lyapunov;
pub mod manifest;
pub mod precision;
pub mod qsystem;
pub mod recurrence;
pub mod series;

pub use error::{Error, Result};
pub use integrator::{
    integrate, integrate_summary, integrate_with, ArcStats, ArcSummary, IntegrationConfig,
    StepRecord, Stepper, TrajectoryArc, Way,
};
pub use precision::{PrecisionContext, Real};
pub use qsystem::{ConvergenceBounds, QuadSystem, TrappingBall};
pub use series::SeriesState;

/// Toolkit version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
