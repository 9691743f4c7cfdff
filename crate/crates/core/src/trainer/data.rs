use std::path::Path;

use crate::io::manifest::{load_manifest, Split};
use crate::io::raw::{read_labels, read_volume};
use crate::phantom::{generate_individual, GenConfig, MultiModalSample};
use crate::phantom::profile::LESION;
use crate::volume::Mask;
use crate::Result;

/// All individuals of a corpus, loaded into memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub modalities: Vec<String>,
    pub shape: [usize; 3],
    pub samples: Vec<MultiModalSample>,
}

impl Dataset {
    /// Load and validate a manifest and every file it references.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let (manifest, root) = load_manifest(manifest_path)?;
        let modalities = manifest.modality_ids();
        let samples = manifest
            .individuals
            .iter()
            .map(|ind| {
                let volumes = modalities
                    .iter()
                    .map(|m| read_volume(&root.join(&ind.files[m]), manifest.shape))
                    .collect::<Result<Vec<_>>>()?;
                Ok(MultiModalSample {
                    individual_id: ind.id.clone(),
                    volumes,
                    seg_labels: read_labels(&root.join(&ind.label_file), manifest.shape)?,
                    has_lesion: ind.has_lesion,
                    split: ind.split,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            modalities,
            shape: manifest.shape,
            samples,
        })
    }

    /// Generate the corpus in memory (same content as `generate_dataset`).
    pub fn generate(cfg: &GenConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.train_individuals + cfg.test_individuals;
        let samples = (0..n).map(|i| generate_individual(cfg, i)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            modalities: cfg.modality_ids(),
            shape: cfg.anatomy.shape,
            samples,
        })
    }

    pub fn split(&self, split: Split) -> Vec<&MultiModalSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }
}

/// Binary lesion mask of a sample.
pub fn lesion_mask(sample: &MultiModalSample) -> Mask {
    sample.seg_labels.map(|c| u8::from(c == LESION))
}
