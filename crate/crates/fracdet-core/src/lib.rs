//! Core library for the fracdet toolkit: COCO dataset preparation,
//! grayscale preprocessing kernels, exact loss kernels, a detection and
//! classification metrics engine, and the detector-to-classifier fusion
//! pipeline with pluggable inference backends.
//!
//! Everything here is deterministic: all randomness flows through the
//! seeded [`rng::SplitMix64`] generator, and all metric aggregation is
//! order-insensitive, so identical inputs produce identical outputs on
//! every platform.

pub mod coco;
pub mod geometry;
pub mod imgproc;
pub mod loss;
pub mod metrics;
pub mod pipeline;
pub mod rng;

pub use geometry::{BBox, Detection, ImageBounds};
pub use imgproc::GrayImage;
pub use metrics::{ClassReport, DetEvalSummary, ImageLevelSummary};
pub use pipeline::{PipelineConfig, PipelineResult};
