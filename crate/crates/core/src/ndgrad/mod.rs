//! Dense float64 tensors with a dynamic reverse-mode gradient tape.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{Binary, Graph, Unary, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{GradBuffer, ParamId, ParamSet, Session};
pub use tensor::Tensor;
