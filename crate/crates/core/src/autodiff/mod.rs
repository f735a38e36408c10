//! Minimal reverse-mode automatic differentiation: tensors, a recording
//! tape, parameter storage, Adam and a finite-difference checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckReport, DEFAULT_EPS};
pub use params::{seeded_rng, Adam, Param, ParamId, ParamStore, Rng};
pub use tape::{Tape, Var};
pub use tensor::{cosine_similarity, softmax_slice, Tensor, COSINE_EPS};
