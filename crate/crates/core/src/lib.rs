//! Acute lymphocytic leukemia screening on blood-smear images.
//!
//! The pipeline runs denoising and contrast enhancement, binarization and
//! morphological cleaning, k-means segmentation of nucleus and cytoplasm,
//! overlap detection and separation, per-cell shape/texture/statistical
//! feature extraction, and benign/malignant classification with kNN or
//! Gaussian Naive Bayes. A synthetic smear generator with exact ground truth
//! serves as the verification corpus.

pub mod classify;
pub mod clean;
pub mod config;
pub mod error;
pub mod features;
pub mod io;
pub mod kmeans;
pub mod metrics;
pub mod overlap;
pub mod pipeline;
pub mod preprocess;
pub mod raster;
pub mod region;
pub mod segment;
pub mod synth;

pub use error::{Error, Result};
pub use raster::{channel, connected_components, to_grayscale, BinaryMask, Connectivity, LabelMap, RasterImage};
pub use region::{extract_regions, BoundingBox, Region};
