//! Files on disk: tensors, checkpoints, fixations, manifests, and the synthetic generator.

pub mod checkpoint;
pub mod featfile;
pub mod fixations;
pub mod manifest;
pub mod synthetic;

pub use checkpoint::{load_params, save_params};
pub use featfile::{read_feature_file, write_feature_file, DType};
pub use manifest::{ClipData, ClipRecord, Dataset, Manifest, Split};
