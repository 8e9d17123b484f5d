//! Minimal reverse-mode differentiation over dense arrays.
//!
//! Operations are recorded on a [`Tape`] as they run. [`Tape::gradient`]
//! propagates plain numeric gradients back to any set of nodes;
//! [`Tape::input_gradient_graph`] instead records the backward pass as new
//! nodes, which is what a gradient-norm penalty needs in order to be
//! differentiated with respect to the network parameters.

mod array;
pub mod gradcheck;
mod second_order;
mod tape;

pub use array::{Array, ConvGeom, Real};
pub use tape::{Tape, Value};

pub(crate) use tape::softmax_rows;
