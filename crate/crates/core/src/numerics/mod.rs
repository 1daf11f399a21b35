//! Dense 2-D array math with reverse-mode differentiation.
//!
//! Everything is 64-bit and row-major. [`Tensor2`] is a plain value type;
//! [`Graph`] is a per-forward-pass tape whose gradients flow back to named
//! entries in a [`ParamStore`]. [`grad_check`] validates any scalar loss
//! against central finite differences.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, grad_check_graph, GradCheck};
pub use graph::{Graph, NodeId};
pub use params::ParamStore;
pub use tensor::{softmax_rows, Tensor2};
