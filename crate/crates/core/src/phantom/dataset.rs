//! Whole-corpus generation: profiles, renderings and the manifest on disk.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::profile::{sample_profile, AnatomyConfig};
use super::render::{render_modality, ModalityKind, RenderingMap};
use crate::io::manifest::{
    DatasetManifest, IndividualEntry, ModalityEntry, SeedTable, Split, MANIFEST_FILE, MANIFEST_FORMAT_VERSION,
};
use crate::io::raw::{write_labels, write_volume};
use crate::seed::derive_seed;
use crate::volume::{LabelMap, Volume};
use crate::{PuirError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub anatomy: AnatomyConfig,
    pub modalities: Vec<RenderingMap>,
    pub train_individuals: usize,
    pub test_individuals: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            anatomy: AnatomyConfig::default(),
            modalities: vec![
                RenderingMap::t1_like("t1"),
                RenderingMap::t2_like("t2"),
                RenderingMap::pet_like("pet"),
            ],
            train_individuals: 64,
            test_individuals: 16,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.anatomy.validate()?;
        if self.modalities.len() < 2 {
            return Err(PuirError::precondition("at least two modalities are required"));
        }
        if !self.modalities.iter().any(|m| m.kind == ModalityKind::Structural) {
            return Err(PuirError::precondition("at least one structural modality is required"));
        }
        let mut ids: Vec<&str> = self.modalities.iter().map(|m| m.modality_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.modalities.len() {
            return Err(PuirError::precondition("modality ids must be unique"));
        }
        for m in &self.modalities {
            m.validate()?;
        }
        if self.train_individuals + self.test_individuals == 0 {
            return Err(PuirError::precondition("no individuals requested"));
        }
        Ok(())
    }

    pub fn modality_ids(&self) -> Vec<String> {
        self.modalities.iter().map(|m| m.modality_id.clone()).collect()
    }
}

/// One individual with every modality rendered.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiModalSample {
    pub individual_id: String,
    /// Volumes in modality order (see the manifest / [`GenConfig::modalities`]).
    pub volumes: Vec<Volume>,
    pub seg_labels: LabelMap,
    pub has_lesion: bool,
    pub split: Split,
}

impl MultiModalSample {
    /// `[M, D, H, W]` tensor stacking every modality.
    pub fn stack(&self) -> puir_autograd::Tensor {
        let [d, h, w] = self.volumes[0].shape();
        let data = self
            .volumes
            .iter()
            .flat_map(|v| v.data().iter().map(|&x| x as f64))
            .collect();
        puir_autograd::Tensor::new(vec![self.volumes.len(), d, h, w], data).expect("registered volumes")
    }
}

pub fn individual_id(index: usize) -> String {
    format!("ind{index:03}")
}

/// Generate individual `index` of the corpus in memory.
pub fn generate_individual(cfg: &GenConfig, index: usize) -> Result<MultiModalSample> {
    let profile_seed = derive_seed(cfg.seed, "profile", index as u64);
    let profile = sample_profile(profile_seed, &cfg.anatomy)?;
    let volumes = cfg
        .modalities
        .iter()
        .enumerate()
        .map(|(m, map)| {
            let noise_seed = derive_seed(cfg.seed, "noise", (index * cfg.modalities.len() + m) as u64);
            render_modality(&profile, map, noise_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let split = if index < cfg.train_individuals { Split::Train } else { Split::Test };
    Ok(MultiModalSample {
        individual_id: individual_id(index),
        volumes,
        seg_labels: profile.label_map,
        has_lesion: profile.has_lesion,
        split,
    })
}

/// Write the corpus and its manifest into `out_dir`.
pub fn generate_dataset(cfg: &GenConfig, out_dir: &Path, force: bool) -> Result<DatasetManifest> {
    cfg.validate()?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(PuirError::WouldOverwrite(manifest_path));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| PuirError::io(out_dir, e))?;

    let n = cfg.train_individuals + cfg.test_individuals;
    let mut individuals = Vec::with_capacity(n);
    let mut profiles = BTreeMap::new();
    for index in 0..n {
        let sample = generate_individual(cfg, index)?;
        let mut files = BTreeMap::new();
        for (map, vol) in cfg.modalities.iter().zip(&sample.volumes) {
            let name = format!("{}_{}.f32", sample.individual_id, map.modality_id);
            write_volume(vol, &out_dir.join(&name))?;
            files.insert(map.modality_id.clone(), name);
        }
        let label_file = format!("{}_label.u8", sample.individual_id);
        write_labels(&sample.seg_labels, &out_dir.join(&label_file))?;
        profiles.insert(sample.individual_id.clone(), derive_seed(cfg.seed, "profile", index as u64));
        individuals.push(IndividualEntry {
            id: sample.individual_id,
            split: sample.split,
            has_lesion: sample.has_lesion,
            files,
            label_file,
        });
    }

    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        shape: cfg.anatomy.shape,
        modalities: cfg
            .modalities
            .iter()
            .map(|m| ModalityEntry {
                id: m.modality_id.clone(),
                kind: m.kind,
                map_params: m.clone(),
            })
            .collect(),
        individuals,
        seeds: SeedTable {
            base: cfg.seed,
            profiles,
        },
    };
    manifest.save(&manifest_path)?;
    Ok(manifest)
}
