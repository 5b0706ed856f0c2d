//! Label assignment, scale-level augmentation planning, context-mask
//! supervision and Wider Face style evaluation for anchor-based face
//! detectors built on a six-level (p2-p7) pyramid of square anchors.

pub mod assignment;
pub mod augmentation;
pub mod error;
pub mod eval;
pub mod flat;
pub mod geometry;
pub mod hcam;

pub use error::{Error, Result};
