//! Minimal CPU tensor engine: dense `f32` tensors, im2col convolutions backed by
//! `matrixmultiply`, a tape-based autodiff [`Graph`], parameter storage and Adam.
//!
//! Everything is single-threaded and deterministic: the same inputs and seed
//! produce bit-identical results.

pub mod conv;
pub mod gemm;
pub mod graph;
pub mod param;
pub mod tensor;

pub use graph::{BatchStats, Gradients, Graph, Var};
pub use param::{Adam, ParamId, ParamStore};
pub use tensor::Tensor;
