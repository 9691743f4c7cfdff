//! Aggregated evaluation results and their CSV/JSON forms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::seg::ConfusionRates;
use crate::{PuirError, Result};

/// Mean image metrics for one source -> target translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferPair {
    pub source: String,
    pub target: String,
    /// Missing modalities when only the source is given.
    pub mn: usize,
    pub psnr: f64,
    pub nmse: f64,
    pub ssim: f64,
}

/// Segmentation results for one missing-modality setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegSetting {
    pub setting_id: String,
    pub present: Vec<String>,
    pub mn: usize,
    /// Mean plain dice over all cases.
    pub dice: f64,
    /// Cases where both masks were empty (plain dice 1 by convention).
    pub both_empty: usize,
    /// Mean challenge dice over cases with a ground-truth lesion.
    pub challenge_dice: Option<f64>,
    /// Mean challenge dice over all cases, zeros included.
    pub dice_minus: f64,
    pub rates: ConfusionRates,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub transfer: Vec<TransferPair>,
    pub segmentation: Vec<SegSetting>,
}

/// One `(setting, metric)` observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub setting_id: String,
    pub present_modalities: String,
    #[serde(rename = "MN")]
    pub mn: usize,
    pub metric: String,
    pub value: f64,
}

/// Mean and population standard deviation of one metric within an MN group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mn: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

pub const CSV_COLUMNS: [&str; 5] = ["setting_id", "present_modalities", "MN", "metric", "value"];

impl MetricsReport {
    pub fn is_empty(&self) -> bool {
        self.transfer.is_empty() && self.segmentation.is_empty()
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        mean(self.transfer.iter().map(|p| p.ssim))
    }

    pub fn mean_psnr(&self) -> Option<f64> {
        mean(self.transfer.iter().map(|p| p.psnr))
    }

    /// Mean plain dice over the settings with exactly `mn` missing modalities.
    pub fn mean_dice(&self, mn: usize) -> Option<f64> {
        mean(self.segmentation.iter().filter(|s| s.mn == mn).map(|s| s.dice))
    }

    /// Rows in a fixed order: transfer pairs, then segmentation settings.
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for p in &self.transfer {
            let id = format!("{}->{}", p.source, p.target);
            for (metric, value) in [("psnr", p.psnr), ("nmse", p.nmse), ("ssim", p.ssim)] {
                rows.push(MetricRow {
                    setting_id: id.clone(),
                    present_modalities: p.source.clone(),
                    mn: p.mn,
                    metric: metric.into(),
                    value,
                });
            }
        }
        for s in &self.segmentation {
            let mut values = vec![("dice", Some(s.dice)), ("challenge_dice", s.challenge_dice), ("dice_minus", Some(s.dice_minus))];
            values.extend([("tpr", s.rates.tpr), ("tnr", s.rates.tnr), ("fnr", s.rates.fnr), ("fpr", s.rates.fpr)]);
            for (metric, value) in values {
                rows.push(MetricRow {
                    setting_id: s.setting_id.clone(),
                    present_modalities: s.present.join("+"),
                    mn: s.mn,
                    metric: metric.into(),
                    value: value.unwrap_or(f64::NAN),
                });
            }
        }
        rows
    }

    /// Per-(MN, metric) mean and std over settings; undefined values are skipped.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut groups: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
        for r in self.rows() {
            if r.value.is_finite() {
                groups.entry((r.mn, r.metric)).or_default().push(r.value);
            }
        }
        groups
            .into_iter()
            .map(|((mn, metric), v)| {
                let n = v.len() as f64;
                let m = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
                Aggregate {
                    mn,
                    metric,
                    mean: m,
                    std: var.sqrt(),
                    count: v.len(),
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String> {
        rows_to_csv(&self.rows())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| PuirError::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| PuirError::Serialization(e.to_string()))
    }
}

pub fn rows_to_csv(rows: &[MetricRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| PuirError::Serialization(e.to_string()))?;
    }
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS).map_err(|e| PuirError::Serialization(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| PuirError::Serialization(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| PuirError::Serialization(e.to_string()))
}

pub(crate) fn mean(it: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}
