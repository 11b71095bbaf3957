//! Desk-scale RGB-D salient object detection.
//!
//! The crate implements a three-stream (RGB, depth, RGB-D) encoder-decoder
//! with cross-modality interaction units, a reverse-mode tape to train it,
//! a seeded synthetic scene generator and a saliency evaluation harness
//! (MAE, P-R curve, max F-measure, S-measure).
//!
//! Runnable walkthroughs live in `examples/`; the `cirnet` binary exposes
//! the same functionality as subcommands.

#![allow(clippy::needless_range_loop)]

pub mod attention;
pub mod autodiff;
pub mod cli;
pub mod data;
mod error;
pub mod fusion;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod nn_ops;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Rng, Tensor};
