//! Kernel-weighted contrastive pretraining for 3D volumes.
//!
//! The crate provides the y-aware InfoNCE objective (InfoNCE whose
//! positives are spread over samples with similar metadata through a
//! kernel), volumetric augmentations, a small convolutional encoder with
//! analytic gradients, pretraining and evaluation loops, cross-validation
//! planners and a deterministic synthetic cohort generator.
//!
//! Interchangeable pieces (kernels, objectives, transforms, fold
//! strategies) are trait objects registered by name; see [`registry`].

pub mod augment;
pub mod config;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod loss;
pub mod model;
pub mod registry;
pub mod rng;
pub mod train;
pub mod volume;

pub use error::{Error, Result};
