//! Tree-species classification from tomographic SAR cubes.
//!
//! The crate covers the full tabular pipeline: cube and label ingestion,
//! spatially contiguous train/test splits, voxel-to-feature flattening,
//! from-scratch tree-ensemble learners with Gaussian-process Bayesian
//! hyperparameter tuning, imbalance-aware classification reports, and
//! LiDAR-referenced canopy height statistics. A deterministic synthetic
//! scene generator makes the whole pipeline testable at desk scale.

pub mod cube;
pub mod error;
pub mod eval;
pub mod features;
pub mod geosplit;
pub mod heightstats;
pub mod hpo;
pub mod learners;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
