//! The layer zoo: convolutions (regular, atrous, depthwise, separable,
//! atrous separable), pooling, bilinear resizing, batch normalization,
//! activations, dense layers and the classification loss.
//!
//! Submodules hold the raw forward/backward kernels on [`Tensor`]s; the
//! differentiable versions are methods on [`crate::autodiff::Tape`] and the
//! parameterized layers live in [`layers`].
//!
//! [`Tensor`]: crate::tensor::Tensor

pub mod activation;
pub mod conv;
pub mod dense;
pub mod layers;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod resize;

pub use conv::{ConvGeometry, ConvKind, ConvSpec, Padding};
pub use layers::{BatchNorm, Conv2d, Dense, Forward, LayerRow};
pub use norm::Mode;
