//! A small CPU deep-learning engine and the Optic-Net family of retinal
//! OCT classifiers built on it.
//!
//! Tensors are channels-last `(n, h, w, c)`, gradients come from a
//! define-by-run [`autodiff::Tape`], and models are assembled from the
//! layers in [`nn`] by [`opticnet`].

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod opticnet;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
