//! Tensor algebra, reverse-mode differentiation and the optimizer.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{logsumexp, sigmoid, softmax_rows, Gradients, Graph, Var, LOG_EPS};
pub use optim::{adamw_step, Moments, OptimizerState};
pub use params::ModelParams;
pub use tensor::Tensor;
