//! Differentiable layer primitives.
//!
//! Every forward map here has an exact analytic backward counterpart, checked
//! against central finite differences in the unit tests. The kernels are pure
//! functions of their inputs and deterministic: identical inputs produce
//! bit-identical outputs regardless of available parallelism.

mod activations;
mod batchnorm;
mod conv;
mod dense;
#[cfg(test)]
pub(crate) mod testutil;

pub use activations::{
    leaky_relu, leaky_relu_backward, sigmoid, sigmoid_backward, softmax, softmax_backward, tanh,
    tanh_backward,
};
pub use batchnorm::{
    batchnorm2d_backward, batchnorm2d_infer, batchnorm2d_train, update_running_stats,
    BatchNormSaved, BatchStats,
};
pub use conv::{
    conv2d, conv2d_backward, conv_out_extent, conv_transpose2d, conv_transpose2d_backward,
    conv_transpose_out_extent,
};
pub use dense::{dense, dense_backward};
