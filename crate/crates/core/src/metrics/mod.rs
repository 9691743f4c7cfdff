//! Evaluation metrics: image similarity, segmentation overlap and detection,
//! missing-modality settings and embedding diagnostics.

pub mod embedding;
pub mod image;
pub mod missing;
pub mod report;
pub mod seg;

pub use embedding::{gaussian_kl_divergence, personalization_score, KlDivergence, PERSONALIZATION_CAP};
pub use image::{nmse, psnr, psnr_capped, ssim3d, SsimConfig, PSNR_CAP};
pub use missing::{enumerate_missingness, ModalitySubset};
pub use report::{Aggregate, MetricRow, MetricsReport, SegSetting, TransferPair, CSV_COLUMNS};
pub use seg::{challenge_dice, confusion_rates, confusion_rates_from, dice, CaseClass, ConfusionRates};
