//! Tensors, a reverse-mode autodiff tape, 3-D convolution and recurrent
//! layers, Adam, and weight files.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod layers;
pub mod ops;
pub mod optim;
mod params;
mod real;
mod tensor;

pub use error::{NumericsError, Result};
pub use graph::{Backward, BackwardCtx, Gradients, Graph, Var};
pub use params::{ParamCount, ParamEntry, ParamId, ParamStore};
pub use real::{gemm, Real};
pub use tensor::Tensor;
