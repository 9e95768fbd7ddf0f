//! Minimal differentiable tensor core: dense `f64` linear algebra, the
//! attention and normalisation primitives a small Transformer needs, a
//! reverse-mode tape, Adam, finite-difference checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
pub mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::{layer_norm, scaled_dot_attention, softmax_rows, AttentionShape, LAYER_NORM_EPS};
pub use params::{Adam, ParamId, ParamStore};
pub use tensor::Tensor;
