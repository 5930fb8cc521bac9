//! Unsupervised adaptation of a single-view 3D hand pose estimator to a fixed,
//! uncalibrated pair of cameras.
//!
//! The pipeline estimates the rotation between the two cameras from paired
//! predictions, builds stereo-consistent pseudo-labels with attention-based
//! merging and rotation-guided refinement, and trains the estimator against
//! them through a momentum teacher. A synthetic scene generator stands in for
//! real cameras.

pub mod adapt;
pub mod container;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod metrics;
pub mod pseudolabel;
pub mod scene;

pub use error::{Error, Result};
