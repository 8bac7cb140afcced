//! Parametric models: sampling, scores, reparameterizations and closed-form
//! kernel expectations.

mod closed_form;
mod dist;
mod zoo;

pub use closed_form::{has_closed_form, kernel_expectations, KernelExpectations, MAX_SUPPORT};
pub(crate) use closed_form::{evaluate, smoothed_kernel};
pub use dist::Dist;
pub use zoo::{has_pathwise, has_score, log_density_grad, sample, ModelId, ModelSpec, SlotStatus, Theta};
pub(crate) use zoo::pathwise_draw;
