//! Dataset manifest (JSON).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::phantom::render::{ModalityKind, RenderingMap};
use crate::{PuirError, Result};

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityEntry {
    pub id: String,
    pub kind: ModalityKind,
    pub map_params: RenderingMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndividualEntry {
    pub id: String,
    pub split: Split,
    pub has_lesion: bool,
    /// modality id -> volume path relative to the manifest directory.
    pub files: BTreeMap<String, String>,
    pub label_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedTable {
    pub base: u64,
    /// individual id -> anatomy seed.
    pub profiles: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub shape: [usize; 3],
    pub modalities: Vec<ModalityEntry>,
    pub individuals: Vec<IndividualEntry>,
    pub seeds: SeedTable,
}

fn schema(field: impl Into<String>, message: impl Into<String>) -> PuirError {
    PuirError::Schema {
        field: field.into(),
        message: message.into(),
    }
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| PuirError::io(path, e))
    }

    pub fn modality_ids(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.id.clone()).collect()
    }

    pub fn modality_index(&self, id: &str) -> Result<usize> {
        self.modalities
            .iter()
            .position(|m| m.id == id)
            .ok_or_else(|| PuirError::UnknownModality(id.to_string()))
    }

    /// Structural checks plus existence and byte length of every file.
    pub fn validate(&self, root: &Path) -> Result<()> {
        if self.format_version != MANIFEST_FORMAT_VERSION {
            return Err(schema(
                "format_version",
                format!("expected {MANIFEST_FORMAT_VERSION}, found {}", self.format_version),
            ));
        }
        let [d, h, w] = self.shape;
        if d == 0 || h == 0 || w == 0 {
            return Err(schema("shape", "dimensions must be positive"));
        }
        if self.modalities.is_empty() {
            return Err(schema("modalities", "empty"));
        }
        let voxels = (d * h * w) as u64;
        for (i, ind) in self.individuals.iter().enumerate() {
            for m in &self.modalities {
                let field = format!("individuals[{i}].files.{}", m.id);
                let rel = ind.files.get(&m.id).ok_or_else(|| schema(&field, "missing entry"))?;
                check_file(&root.join(rel), voxels * 4, &field)?;
            }
            check_file(&root.join(&ind.label_file), voxels, &format!("individuals[{i}].label_file"))?;
        }
        Ok(())
    }
}

fn check_file(path: &Path, expected: u64, field: &str) -> Result<()> {
    let meta = fs::metadata(path).map_err(|_| schema(field, format!("missing file {}", path.display())))?;
    if meta.len() != expected {
        return Err(schema(
            field,
            format!("{} has {} bytes, expected {expected}", path.display(), meta.len()),
        ));
    }
    Ok(())
}

/// Parse and validate a manifest; returns it with the directory that its
/// relative paths resolve against.
pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let text = fs::read_to_string(path).map_err(|e| PuirError::io(path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| schema(path.display().to_string(), e.to_string()))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    manifest.validate(&root)?;
    Ok((manifest, root))
}
