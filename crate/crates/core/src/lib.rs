//! Knowledge-graph-embedded classification heads for object detection.
//!
//! Class scores are replaced by a regression into a space of fixed semantic
//! class prototypes; classification becomes a nearest-prototype search. The
//! crate covers prototype construction, embedding-space metrics, the losses
//! used to train such heads (with analytic gradients), keypoint and
//! set-matching decoders, a small training loop, and the error-analysis
//! suite used to compare detectors.

pub mod annotations;
pub mod assignment;
pub mod boxes;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod heads;
pub mod knowledge_graph;
pub mod linalg;
pub mod losses;
pub mod prototypes;
pub mod svd;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::Metric;
pub use linalg::Matrix;
