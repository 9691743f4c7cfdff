use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{PuirError, Result};

/// Architecture hyperparameters. Everything that determines parameter shapes
/// lives here, so its hash identifies checkpoint compatibility.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of modality types; equals input and output channel count.
    pub modalities: usize,
    /// Channels of the final feature map `z` (and of the prior slots).
    pub width: usize,
    /// Number of stride-2 encoder levels.
    pub depth: usize,
    /// Number of prior slots.
    pub slots: usize,
    /// Contrastive embedding dimension.
    pub proj_dim: usize,
    /// Retrieve from the learnable prior; when off the fusion sees zeros.
    #[serde(default = "yes")]
    pub use_prior: bool,
}

fn yes() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            modalities: 3,
            width: 32,
            depth: 3,
            slots: 64,
            proj_dim: 32,
            use_prior: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modalities == 0 || self.width == 0 || self.depth == 0 || self.slots == 0 || self.proj_dim == 0 {
            return Err(PuirError::precondition("model dimensions must all be positive"));
        }
        Ok(())
    }

    /// Channel count of encoder level `l`; the deepest level has `width`.
    pub fn level_channels(&self, l: usize) -> usize {
        (self.width >> (self.depth - 1 - l)).max(2)
    }

    pub fn channels(&self) -> Vec<usize> {
        (0..self.depth).map(|l| self.level_channels(l)).collect()
    }

    /// Spatial extents must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    pub fn check_spatial(&self, dims: [usize; 3]) -> Result<()> {
        let m = self.spatial_multiple();
        if dims.iter().any(|&n| n == 0 || n % m != 0) {
            return Err(PuirError::precondition(format!(
                "spatial shape {dims:?} must be a positive multiple of {m} for depth {}",
                self.depth
            )));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("plain struct serialises");
        hex(&Sha256::digest(&json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
