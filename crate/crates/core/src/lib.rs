//! Differentiable permutohedral lattice filtering.
//!
//! Data living at arbitrary positions of a `d`-dimensional feature space is
//! splatted onto the corners of the permutohedral lattice, convolved with a
//! small learnable per-channel kernel, and sliced back out at a second set
//! of positions. Every stage has an analytic backward pass, including the
//! gradient with respect to the feature positions themselves, so the
//! features can be produced by a trainable embedding network.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: elevation, enclosing simplices, barycentric Jacobians,
//!   neighborhoods and the key hash.
//! * [`ops`]: splat / convolve / slice with normalization, forward and
//!   backward, plus a dense reference implementation.
//! * [`embed`]: the convolutional embedding network with batch norm.
//! * [`optim`]: two-group optimizer with clipping and log-domain weights.
//! * [`pipeline`]: guided upsampling (features, prediction, training, grid
//!   search).
//! * [`metrics`] and [`io`]: PSNR, AEE, boundary AEE, images and `.flo`.
//! * [`config`], [`checkpoint`], [`cli`]: run configuration, parameter files
//!   and the commands behind the `permlattice` binary.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod embed;
pub mod error;
pub mod gradcheck;
pub mod imageops;
pub mod io;
pub mod lattice;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod pipeline;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DataMap, FeatureMap, Image, Matrix};
