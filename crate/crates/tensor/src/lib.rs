//! Dense tensors with reverse-mode automatic differentiation.
//!
//! The engine supports exactly what small convolutional image-to-image
//! generators and their losses need: 2-D convolution and its transpose,
//! bilinear resizing, channel concatenation, pointwise activations, dropout,
//! instance/layer normalization, max pooling and a handful of reductions.
//! Image tensors use `N x C x H x W` layout.
//!
//! Graphs are recorded implicitly: every op whose inputs require gradients
//! keeps references to them, and [`Tensor::backward`] walks that DAG once in
//! reverse topological order.

mod element;
mod error;
pub mod gradcheck;
pub mod ops;
mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use tensor::Tensor;
