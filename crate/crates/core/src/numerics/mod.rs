//! Dense float64 tensors with a tape-based reverse-mode autodiff engine and a
//! finite-difference gradient checker.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{check_gradients, check_gradients_strided, GradCheck, DEFAULT_STEP};
pub use graph::{Gradients, Graph, ParamId, Var};
pub use tensor::Tensor;
