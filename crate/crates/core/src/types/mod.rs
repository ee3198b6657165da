//! Shared domain types and their on-disk formats.

mod features;
mod manifest;
mod mask;
pub mod pnm;
mod tensor;

pub use features::{FeatureMap, UNIT_NORM_TOL};
pub use manifest::{
    load_manifest, validate_manifest, DatasetManifest, ImageRecord, ManifestFile, RecordEntry,
};
pub use mask::{pixel_to_patch, Mask};
pub use tensor::{Tensor, PFT_MAGIC};
