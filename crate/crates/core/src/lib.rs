//! Anchor-free face detection built on receptive fields.
//!
//! Every neuron of a convolutional feature map sees a square window of the
//! input image. The centers of those windows are tiled on a regular lattice
//! and act as implicit anchors: a cell is matched to a face when its
//! receptive-field center falls inside the face box, and it regresses the
//! box corners relative to that center.
//!
//! This crate is `no_std` (it needs `alloc`) and carries everything that is
//! pure computation: tensors and convolution kernels, receptive-field
//! arithmetic, the 25-layer / 8-branch network, label assignment, losses with
//! hard negative mining, the SGD training step with augmentation, synthetic
//! data and the single-inference detection pipeline. File formats, the CLI
//! and timing live in the `lffd` crate.

#![no_std]
#![deny(rust_2018_idioms)]

extern crate alloc;

#[cfg(test)]
extern crate std;

mod error;
mod gemm;
mod scalar;

pub mod assign;
pub mod augment;
pub mod conv;
pub mod detect;
pub mod gradcheck;
pub mod image;
pub mod loss;
pub mod net;
pub mod optim;
pub mod rf;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
