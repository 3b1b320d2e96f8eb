//! Keypoint-guided virtual staining at desk scale.
//!
//! The crate trains an image translation model on procedurally generated,
//! misaligned stain pairs with known ground truth. Four learned pieces
//! cooperate: a keypoint detector that also fits the affine alignment
//! between the two stains, a Gaussian keypoint-to-heatmap embedding, a
//! heatmap-conditioned generator, and a heatmap-conditioned discriminator.
//! Everything runs on a small reverse-mode autodiff tensor core.

pub mod detector;
pub mod discriminator;
pub mod embedding;
pub mod error;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod params;
pub mod ppm;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
