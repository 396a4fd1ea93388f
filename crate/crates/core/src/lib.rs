//! Shift-based residual networks at desk scale.
//!
//! The crate implements the full stack needed to study spatial-shift
//! residual networks without a GPU: a rank-4 tensor core, the shift
//! operation and its channel partition rule, the usual convolutional
//! layers, four residual block shapes, a declarative network
//! description with builtin architectures, static cost analysis
//! (parameters, FLOPs, receptive fields), and a small reverse-mode
//! training engine with finite-difference gradient checking.
//!
//! Shifts move whole channel planes by integer offsets. They cost no
//! parameters and no FLOPs, so a network built from shifts and 1x1
//! convolutions spends its entire budget on channel mixing. The
//! library keeps two numeric widths: `f32` for training and `f64`
//! for gradient checking and other high-precision oracles.

pub mod blocks;
pub mod cost;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod netspec;
pub mod optim;
pub mod scalar;
pub mod shift;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
