//! Dense kernels and the two model families: an equal-width MLP and a simple
//! (Elman) RNN, each with hand-written backpropagation.

mod forward;
pub mod loss;
mod matrix;
mod model;

pub use forward::{
    backward, backward_into, finite_diff_grad, forward, max_relative_error, mlp_forward, one_hot,
    predict, rnn_forward, Cache, Input,
};
pub use loss::Target;
pub use matrix::{dot, Matrix};
pub use model::{Activation, GradientSet, MatrixShape, ModelKind, ModelParams, ModelSpec, Readout};
