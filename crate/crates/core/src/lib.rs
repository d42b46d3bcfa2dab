//! A staged image restoration network on a small reverse-mode autodiff core.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`], [`autograd`], [`params`]: NCHW tensors, a recording tape with
//!   reverse-mode gradients, and named parameters.
//! * [`nn`]: channel attention blocks, original-resolution blocks, the U-Net
//!   style encoder-decoder, the supervised attention module and cross-stage
//!   feature fusion.
//! * [`model`]: the three-stage network with its multi-patch input hierarchy,
//!   early-exit inference and checkpoints ([`checkpoint`]).
//! * [`loss`], [`metrics`]: Charbonnier and edge losses, PSNR/SSIM and the
//!   error-reduction conversions.
//! * [`optim`], [`degrade`], [`data`], [`train`], [`image_io`], [`config`]:
//!   everything needed to train and evaluate at desk scale.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod degrade;
pub mod error;
pub mod image_io;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod selftest;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor};
