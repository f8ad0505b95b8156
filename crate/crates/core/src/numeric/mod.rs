//! Linear algebra, tape-based differentiation, MLPs and the optimizer.

pub mod adam;
pub mod checkpoint;
pub mod matrix;
pub mod mlp;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use matrix::Matrix;
pub use mlp::{Activation, MlpNodes, MlpParams};
pub use tape::{Gradients, NodeId, Tape};
