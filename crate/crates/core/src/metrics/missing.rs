//! Missing-modality settings.

use serde::{Deserialize, Serialize};

use crate::{PuirError, Result};

/// The modalities available in one evaluation setting.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalitySubset {
    /// Sorted, non-empty indices into the modality list.
    pub present: Vec<usize>,
    pub total: usize,
}

impl ModalitySubset {
    pub fn new(mut present: Vec<usize>, total: usize) -> Result<Self> {
        present.sort_unstable();
        present.dedup();
        if present.is_empty() {
            return Err(PuirError::precondition("a modality subset must be non-empty"));
        }
        if present.iter().any(|&i| i >= total) {
            return Err(PuirError::precondition(format!("modality index out of range for {total} modalities")));
        }
        Ok(Self { present, total })
    }

    /// Number of missing modalities.
    pub fn mn(&self) -> usize {
        self.total - self.present.len()
    }

    /// `FM` for the full set, otherwise `MN<k>`.
    pub fn group(&self) -> String {
        match self.mn() {
            0 => "FM".to_string(),
            k => format!("MN{k}"),
        }
    }

    /// Stable identifier such as `MN1:t1+pet`.
    pub fn setting_id(&self, names: &[String]) -> String {
        format!("{}:{}", self.group(), self.present_names(names).join("+"))
    }

    pub fn present_names(&self, names: &[String]) -> Vec<String> {
        self.present
            .iter()
            .map(|&i| names.get(i).cloned().unwrap_or_else(|| i.to_string()))
            .collect()
    }

    /// Parse `+`-separated modality ids against `names`.
    pub fn parse(spec: &str, names: &[String]) -> Result<Self> {
        let idx = spec
            .split('+')
            .map(|s| {
                let s = s.trim();
                names
                    .iter()
                    .position(|n| n == s)
                    .ok_or_else(|| PuirError::precondition(format!("unknown modality '{s}' (known: {names:?})")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(idx, names.len())
    }
}

/// Every non-empty subset of `m` modalities, ordered by missing count and
/// then lexicographically by present indices.
pub fn enumerate_missingness(m: usize) -> Result<Vec<ModalitySubset>> {
    if m == 0 || m > 16 {
        return Err(PuirError::precondition("enumerate_missingness needs 1..=16 modalities"));
    }
    let mut all: Vec<ModalitySubset> = (1u32..(1 << m))
        .map(|mask| ModalitySubset {
            present: (0..m).filter(|&i| mask & (1 << i) != 0).collect(),
            total: m,
        })
        .collect();
    all.sort_by(|a, b| a.mn().cmp(&b.mn()).then_with(|| a.present.cmp(&b.present)));
    Ok(all)
}
