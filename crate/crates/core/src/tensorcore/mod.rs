//! Deterministic reverse-mode math: tensors, a recording tape, Adam and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport};
pub use tape::{softmax, softmax_vec, Gradients, Tape, Var};
pub use tensor::{ParamId, ParamSet, Parameter, Tensor};
