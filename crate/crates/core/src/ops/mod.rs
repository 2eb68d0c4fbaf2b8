//! Primitive numeric kernels on [`Tensor`](crate::Tensor), each with the
//! backward rule the tape needs.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod resample;
pub mod shape;

pub use activation::{leaky_relu, sigmoid, softmax, softplus, DEFAULT_LEAKY_SLOPE};
pub use conv::{conv2d, conv2d_with, depthwise_conv1d, Conv2dSpec};
pub use linear::{hadamard, linear};
pub use norm::layer_norm;
pub use resample::{bilinear_upsample, crop, reflect_pad_to};
pub use shape::{concat_channels, flatten_spatial, split_channels, transpose_lc, unflatten_spatial};
