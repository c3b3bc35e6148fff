//! Differentiable operations. Each records a backward rule when any input
//! requires a gradient.

mod activation;
mod arith;
mod channels;
mod conv;
mod dropout;
mod norm;
mod pool;
mod resize;

pub use activation::{activation, leaky_relu, relu, Activation};
pub use arith::{abs_diff, add, mean, mul, scale, sub, sum, Reduction};
pub use channels::{concat_channels, concat_channels_many, repeat_channels, slice_channels};
pub use conv::{conv2d, conv2d_transpose};
pub use dropout::dropout;
pub use norm::{channel_affine, normalize, standardize, NormMode};
pub use pool::max_pool2d;
pub use resize::resize_bilinear;
