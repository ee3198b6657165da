//! Dataset manifest: a JSON file listing records by relative path.
//!
//! ```json
//! {
//!   "name": "bench-easy",
//!   "patch_size": 8,
//!   "records": [
//!     { "id": "img_0000", "image": "images/img_0000.pgm",
//!       "gt_mask": "masks/img_0000.pgm", "features": "features/img_0000.pft" }
//!   ]
//! }
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::pnm::{self, chw};
use crate::types::{FeatureMap, Mask, Tensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub patch_size: usize,
    pub records: Vec<RecordEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub id: String,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_mask: Option<PathBuf>,
    pub features: PathBuf,
}

/// One validated image. The ground-truth mask is only ever read by the
/// simulated oracle and by reporting.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub id: String,
    pub image: Tensor<f32>,
    pub gt_mask: Option<Mask>,
    pub feature_ref: PathBuf,
}

impl ImageRecord {
    pub fn height(&self) -> usize {
        self.image.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.image.dims()[2]
    }

    pub fn channels(&self) -> usize {
        self.image.dims()[0]
    }

    /// Same record with the ground truth removed.
    pub fn without_gt(&self) -> ImageRecord {
        ImageRecord {
            gt_mask: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub name: String,
    pub patch_size: usize,
    /// Manifest file the dataset was loaded from, if any.
    pub source: Option<PathBuf>,
    pub records: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn has_ground_truth(&self) -> bool {
        self.records.iter().all(|r| r.gt_mask.is_some())
    }

    pub fn without_gt(&self) -> DatasetManifest {
        DatasetManifest {
            records: self.records.iter().map(ImageRecord::without_gt).collect(),
            ..self.clone()
        }
    }
}

/// Reads the manifest, then loads and dimension-checks every referenced file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let root = path.parent().unwrap_or_else(|| Path::new("."));
    let mut dataset = validate_manifest(&file, root)?;
    dataset.source = Some(path.to_path_buf());
    Ok(dataset)
}

pub fn validate_manifest(file: &ManifestFile, root: &Path) -> Result<DatasetManifest> {
    if file.patch_size == 0 {
        return Err(Error::Config("patch_size must be positive".into()));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(file.records.len());
    for entry in &file.records {
        if !seen.insert(entry.id.as_str()) {
            return Err(Error::InvalidRecord {
                id: entry.id.clone(),
                reason: "duplicate id".into(),
            });
        }
        records.push(load_record(entry, root, file.patch_size)?);
    }
    Ok(DatasetManifest {
        name: file.name.clone(),
        patch_size: file.patch_size,
        source: None,
        records,
    })
}

fn load_record(entry: &RecordEntry, root: &Path, patch_size: usize) -> Result<ImageRecord> {
    let invalid = |reason: String| Error::InvalidRecord {
        id: entry.id.clone(),
        reason,
    };
    let image = pnm::read_image(&root.join(&entry.image)).map_err(|e| invalid(e.to_string()))?;
    let (_, h, w) = chw(&image)?;
    if h % patch_size != 0 || w % patch_size != 0 {
        return Err(invalid(format!(
            "image {h}x{w} not divisible by patch_size {patch_size}"
        )));
    }
    let gt_mask = match &entry.gt_mask {
        Some(p) => {
            let m = pnm::read_mask(&root.join(p)).map_err(|e| invalid(e.to_string()))?;
            if m.height() != h || m.width() != w {
                return Err(invalid(format!(
                    "dimension mismatch: mask {}x{} vs image {h}x{w}",
                    m.height(),
                    m.width()
                )));
            }
            Some(m)
        }
        None => None,
    };
    let feature_ref = root.join(&entry.features);
    let raw = Tensor::<f32>::load(&feature_ref).map_err(|e| invalid(e.to_string()))?;
    let fm = FeatureMap::from_tensor_unchecked(raw).map_err(|e| invalid(e.to_string()))?;
    if fm.grid_h() != h / patch_size || fm.grid_w() != w / patch_size {
        return Err(invalid(format!(
            "dimension mismatch: feature grid {}x{} vs expected {}x{}",
            fm.grid_h(),
            fm.grid_w(),
            h / patch_size,
            w / patch_size
        )));
    }
    if let Some((r, c, norm)) = fm.first_non_unit() {
        return Err(invalid(format!(
            "feature vector at patch ({r}, {c}) has norm {norm:.6}; features must be unit-norm"
        )));
    }
    Ok(ImageRecord {
        id: entry.id.clone(),
        image,
        gt_mask,
        feature_ref,
    })
}
