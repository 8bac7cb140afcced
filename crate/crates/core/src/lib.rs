//! Minimum-distance estimation with the maximum mean discrepancy (MMD).
//!
//! The crate fits parametric models and regression models by minimizing the
//! MMD between the model and the empirical distribution of the data, using
//! closed-form gradients where they exist and stochastic gradients otherwise.

mod error;
pub mod estimate;
pub mod kernel;
pub mod models;
pub mod optim;
pub mod regression;
pub mod special;

pub use error::{MmdError, Result};
pub use kernel::{auto_bdwth_x, kernel_eval, median_heuristic, mmd2_empirical, KernelFamily, KernelSpec, Sample};
pub use models::{ModelId, ModelSpec, Theta};
pub use estimate::{fit, fit_exact, FitResult};
pub use optim::{Method, OptimizerConfig};
pub use regression::{fit_regression, RegFitResult, RegModelId, RegressionModelSpec, RegressionProblem};
