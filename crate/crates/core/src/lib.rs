//! Bi-temporal SAR flood detection.
//!
//! A pre-flood and a post-flood Sentinel-1 tile (VV and VH backscatter) are
//! encoded by one shared convolutional encoder, re-weighted by concurrent
//! spatial and channel squeeze-and-excitation blocks, fused by channel
//! concatenation and decoded into a per-pixel flood probability map.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`tensor`]), a flat binary raster format ([`raster`]), SAR conditioning
//! and a synthetic data generator ([`preprocess`]), the network ([`model`]),
//! losses and metrics ([`loss`]), the optimisation loop ([`train`]) and the
//! command line front end ([`cli`]).

pub mod cli;
pub mod error;
pub mod loss;
pub mod model;
pub mod preprocess;
pub mod raster;
mod seed;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
