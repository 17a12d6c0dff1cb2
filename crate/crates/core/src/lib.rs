//! Conversion of parallel-beam projection stacks into fan-beam projections.
//!
//! The library provides two routes from a wedge of parallel projections to a
//! single fan-beam detector row:
//!
//! * a learned route: a frequency-domain filter applied to each projection
//!   row, followed by back-projection onto an image grid, fan-beam forward
//!   projection and a global scale factor ([`rebin::RebinModel`]);
//! * a classical route: geometric rebinning with two steps of spatial
//!   interpolation ([`baseline::geometric_rebin`]).
//!
//! The filter and scale of the learned route are trained by gradient descent
//! against fan-beam labels ([`training::train_two_phase`]). Analytic phantoms
//! for training/validation live in [`phantoms`], the discrete projection
//! operators in [`projectors`], and file formats plus the batch pipeline in
//! [`io`], [`config`] and [`pipeline`].

pub mod baseline;
pub mod config;
pub mod error;
pub mod geometry;
pub mod image;
pub mod io;
pub mod phantoms;
pub mod pipeline;
pub mod projectors;
pub mod rebin;
pub mod spectral;
pub mod training;

pub use error::{Error, Result};
pub use image::Image;

/// Version string stamped into file sidecars and manifests.
pub const CREATOR_VERSION: &str = env!("CARGO_PKG_VERSION");
