//! Image / label manifests for the segmentation stages.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::volume::{pvol, Mask, Volume};

pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub image_path: String,
    /// Whole kidney; may overlap the tumor.
    pub kidney_path: String,
    pub tumor_path: String,
    pub split: Split,
    pub seed: u64,
    /// Known for phantoms only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isodense: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub entries: Vec<DatasetEntry>,
}

/// One loaded image with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub name: String,
    pub image: Volume<f32>,
    pub kidney: Mask,
    pub tumor: Mask,
    pub isodense: Option<bool>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_slice(&crate::error::read_file(path)?)?;
        if m.version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset manifest version {}", m.version)));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }

    /// Read every entry of `split` (all entries for `None`); paths resolve
    /// against `root`.
    pub fn load_cases(&self, root: impl AsRef<Path>, split: Option<Split>) -> Result<Vec<Case>> {
        let root = root.as_ref();
        self.entries
            .iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .map(|e| load_case(root, e))
            .collect()
    }
}

fn load_case(root: &Path, e: &DatasetEntry) -> Result<Case> {
    let p = |s: &str| -> PathBuf { root.join(s) };
    let image = pvol::read_volume(p(&e.image_path))?;
    let kidney = pvol::read_mask(p(&e.kidney_path))?;
    let tumor = pvol::read_mask(p(&e.tumor_path))?;
    if kidney.dims() != image.dims() || tumor.dims() != image.dims() {
        return invalid(format!("entry {}: image and label dims differ", e.image_path));
    }
    if kidney.spacing() != image.spacing() || tumor.spacing() != image.spacing() {
        return invalid(format!("entry {}: image and label spacings differ", e.image_path));
    }
    let name = Path::new(&e.image_path).file_stem().map_or_else(|| e.image_path.clone(), |s| s.to_string_lossy().into_owned());
    Ok(Case { name, image, kidney, tumor, isodense: e.isodense })
}
