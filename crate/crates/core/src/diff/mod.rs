//! Dense tensors and reverse-mode differentiation.

pub mod checkpoint;
pub mod elementwise;
pub(crate) mod gemm;
pub mod gradcheck;
pub mod linalg;
pub mod norm;
mod param;
pub mod spatial;
pub mod tape;
pub mod temporal;
mod tensor;

pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Fault, Gradients, NodeId, Tape};
pub use tensor::Tensor;
