//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Graph`] records every forward operation into an arena of nodes in
//! insertion order. [`Graph::backward`] walks that arena in reverse, which is
//! a valid topological order, so gradient accumulation is fully deterministic.
//!
//! Parameters live outside the graph in a [`ParamStore`]; a forward pass copies
//! them in as leaf nodes and [`Gradients`] maps the resulting buffers back.

mod error;
pub mod gradcheck;
mod graph;
pub mod nn;
mod ops;
mod optim;
mod param;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use param::{read_checkpoint, write_checkpoint, GradBuffer, Initializer, ParamId, ParamStore, Parameter};
pub use tensor::{Real, Tensor};

/// Magic bytes that open every parameter checkpoint.
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CTFW";
/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u16 = 1;
