//! Joint estimation of a dynamic state and a sparse additive model correction.
//!
//! A square-root unscented Kalman filter runs on the state augmented with the
//! coefficients of a function library. A second pass per step pulls the
//! coefficients toward sparsity through a pseudo-measurement of their ℓ₁ norm,
//! with the sigma-point spread set by the mean variance of a regularized
//! horseshoe prior.
//!
//! ```no_run
//! use joint_ukf::config::{ExperimentConfig, Observer};
//! use joint_ukf::experiment::run_experiment;
//!
//! let cfg = ExperimentConfig::default();
//! let result = run_experiment(&cfg, &[Observer::Classical, Observer::Joint]).unwrap();
//! for run in &result.runs {
//!     println!("{}: {:.4}", run.observer.name(), run.final_error());
//! }
//! ```

pub mod analysis;
pub mod config;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod models;
pub mod observability;
pub mod prior;
pub mod srukf;

pub use nalgebra;

pub use config::{ExperimentConfig, Observer};
pub use linalg::SqrtFactor;
pub use models::{Duffing, FunctionLibrary, JointModel, JointState};
pub use srukf::{FilterState, JointFilter, JointFilterOptions, PseudoMeasurement};
