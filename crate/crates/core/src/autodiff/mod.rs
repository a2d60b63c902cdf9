//! Dense tensors and a reverse-mode tape, just large enough to train the
//! dense and convolutional models and to differentiate the repellence term.

mod element;
pub mod gradcheck;
mod graph;
mod tensor;

pub use element::Element;
pub use graph::{Graph, Var};
pub use tensor::Tensor;
