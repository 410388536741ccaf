//! Cell phenotype comparison for H&E histopathology tiles.
//!
//! The crate covers the whole path from region images to representative
//! cell panels:
//!
//! * [`stain`]: LAB mean/std color normalization and Lambert-Beer color
//!   deconvolution into Hematoxylin / Eosin concentration channels.
//! * [`segment`]: Hessian eigenvalue blob enhancement over several scales,
//!   hysteresis thresholding and post-processing into [`CellInstance`]s.
//! * [`features`]: ten per-cell size, shape and intensity features and
//!   cohort z-score normalization.
//! * [`learn`]: six binary classifiers, stratified out-of-fold evaluation
//!   and ensemble-vote data pruning.
//! * [`analyze`]: SMACOF multidimensional scaling, K-means with elbow
//!   selection and representative-cell panel retrieval.
//! * [`synth`]: seeded synthetic cohorts (rendered tiles with ground truth,
//!   and feature-space mixtures) used to verify everything above.

pub mod analyze;
pub mod config;
pub mod error;
pub mod features;
pub mod imagecore;
pub mod learn;
pub mod rng;
pub mod segment;
pub mod stain;
pub mod synth;

pub use error::{Error, Result};
pub use imagecore::{
    BinaryMask, CellInstance, CohortManifest, Group, ManifestEntry, RegionImage, ScalarImage,
    ValueKind,
};
