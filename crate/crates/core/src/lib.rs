//! Cross-clip object association for clip-level video segmentation.
//!
//! The crate takes per-clip object tubes (class-labeled masks plus an
//! appearance embedding per frame) and links them into video-level tracks
//! with a hierarchical matcher: mask-IoU stitching on overlapping frames
//! first, then a location-aware memory buffer for objects that were not
//! stitched. A synthetic scenario generator and an identity-F1 evaluator
//! make the whole loop testable without a segmentation model.

pub mod assignment;
pub mod bench;
pub mod domain;
pub mod error;
pub mod io;
pub mod kmeans_attention;
pub mod memory;
pub mod metrics;
pub mod pipeline;
pub mod simulator;
pub mod stitching;

pub use error::{Error, Result};
