//! Keypoint heatmap regression cast as entropic optimal transport between a
//! predicted heatmap and a sub-pixel dot annotation.
//!
//! The crate covers encoding keypoints into supplier/demander masses,
//! solving the transport problem (Sinkhorn and an exact simplex oracle),
//! decoding heatmaps back to coordinates, analysis of the pixel-wise MSE
//! risk, and a small training harness.

pub mod analysis;
pub mod checks;
pub mod decode;
pub mod encode;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod transport;

pub use error::{Error, Result};
pub use grid::{GridGeometry, Heatmap, Keypoint, PoseInstance};
