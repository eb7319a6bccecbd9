//! Dense tensors, a reverse-mode computation record and the Adam optimizer.

pub mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{gradient_check, relative_error};
pub use graph::{
    cross_entropy, mse, sigmoid, stable_softmax, Binary, Gradients, Graph, Unary, Var,
};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;
