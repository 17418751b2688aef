//! Reverse-mode automatic differentiation over dense tensors.

pub mod gradcheck;
mod graph;
pub mod init;
pub mod ops;
mod params;
mod tensor;

pub use graph::{BackwardArgs, BackwardFn, Gradients, Graph, Var};
pub use params::{Binder, Bindings, Buffer, BufferId, ParamId, Parameter, ParameterSet, SgdConfig};
pub use tensor::Tensor;
