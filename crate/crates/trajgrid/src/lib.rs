//! Baked projectile trajectory grids and two inverse solvers.
//!
//! The pipeline: simulate a fan of drag-affected trajectories over the
//! elevation-angle range `[0, pi]` ([`dynamics`], [`grid`]), subsample the
//! points to a uniform spatial bound, turn them into normalized training
//! samples ([`dataset`]), and then answer the inverse question -- which
//! launch angle reaches a given target point -- two ways:
//!
//! * [`solver`]: a classical nearest-segment lookup over the baked grid,
//!   backed by a k-d tree with a brute-force oracle.
//! * [`mlp`]: a from-scratch multilayer perceptron (swish activation,
//!   pre-norm batch normalization, SGD with momentum) trained to regress
//!   the launch angle from target-point features.
//!
//! [`eval`] computes the comparison metrics (MSE, percentage angular error,
//! grid quantization accuracy, closed-loop miss distances), and [`io`] /
//! [`config`] provide the binary file formats, CSV exports, and flat
//! key=value configuration used by the CLI.

pub mod config;
pub mod dataset;
pub mod dynamics;
pub mod eval;
pub mod grid;
pub mod io;
pub mod mlp;
pub mod solver;
pub mod vec2;

pub use dataset::{Dataset, DatasetSample};
pub use dynamics::{Environment, Profile, ProjectileParams, SimConfig, State2};
pub use eval::MetricsReport;
pub use grid::{GridBundle, TerminationCause, Trajectory};
pub use mlp::{MlpConfig, Network, TrainingConfig};
pub use solver::{InitialConditions, SpatialIndex};
pub use vec2::Vec2;

/// Errors shared by every module in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or configuration value violates its domain.
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    /// An operation was called with arguments outside its contract.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A solve target lies outside the baked envelope.
    #[error("target out of baked envelope: range {range:.3} m exceeds {limit:.3} m")]
    OutOfEnvelope { range: f64, limit: f64 },
    /// Model and dataset were produced at different angular densities.
    #[error("angular density mismatch: model/report {expected}, dataset {found}")]
    DensityMismatch { expected: u32, found: u32 },
    /// Training produced a non-finite loss.
    #[error("non-finite training loss at epoch {epoch}: {loss}")]
    NonFiniteLoss { epoch: usize, loss: f64 },
    /// A binary or text artifact did not match its expected format.
    #[error("bad file format: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
