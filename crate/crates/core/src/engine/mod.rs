//! Dense `f64` tensors with reverse-mode differentiation, the Adam optimizer,
//! a finite-difference gradient checker and the parameter checkpoint format.

mod adam;
mod gradcheck;
mod graph;
pub(crate) mod kernels;
mod params;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, SKIP_BELOW};
pub use graph::{softmax, Graph, Var, LOG_CLAMP};
pub use params::{Checkpoint, ParamSet, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tensor::Tensor;
