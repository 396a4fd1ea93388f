//! Neural network layers: convolution, batch normalization, pooling,
//! and the fully connected head with its softmax cross-entropy loss.
//!
//! Layers are plain functions over tensors and flat parameter slices;
//! parameter ownership lives in the graph's registry so the same
//! numeric kernels serve both standalone use and training. Every
//! forward has a matching backward that the gradient-check suite
//! validates against central finite differences.

pub mod conv;
pub mod dense;
pub mod norm;
pub mod pool;

pub use conv::{conv2d, conv2d_backward, pointwise_conv, pointwise_conv_backward, ConvSpec};
pub use dense::{
    linear, linear_backward, softmax_xent, softmax_xent_backward, LinearSpec,
};
pub use norm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BatchNormSpec, BnCache};
pub use pool::{
    avgpool2x2, avgpool2x2_backward, global_avgpool, global_avgpool_backward, maxpool3x3s2,
    maxpool3x3s2_backward, pool_out_hw,
};
