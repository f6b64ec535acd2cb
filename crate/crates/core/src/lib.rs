//! Core of the guidestage motion-guidance and conditioning toolkit.
//!
//! Everything here is pure computation over owned values and builds
//! without `std` (an allocator is required). File formats, the CLI and
//! the toy training loop live in the `guidestage` crate.
//!
//! Module map:
//!
//! - [`tensor`], [`tape`]: dense f64 tensors, a reverse-mode tape and a
//!   finite-difference gradient check.
//! - [`geometry`]: rotated rectangles, hulls, min-area boxes, IoU.
//! - [`body`]: the 15-joint parametric skeleton, projection, retargeting.
//! - [`template`]: motion-template matching, composition and box retargeting.
//! - [`raster`]: guidance rasterization and the convolutional pose encoder.
//! - [`attention`]: full / reference / object attention and the DiT block.
//! - [`flow`]: flow-matching samples, weighted loss, CFG, Euler, clip chaining.
//! - [`caption`]: dictionary-style captions and the hashed text encoder.
//! - [`vae`], [`model`]: the stand-in patch autoencoder and the toy DiT.
#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

extern crate alloc;

pub mod attention;
pub mod body;
pub mod caption;
mod error;
pub mod flow;
pub mod geometry;
pub(crate) mod math;
pub mod model;
pub mod raster;
pub mod rng;
pub mod tape;
pub mod template;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use tape::{grad_check, Tape, Var};
pub use tensor::Tensor;
