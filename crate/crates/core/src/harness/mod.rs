//! Experiment plumbing: configuration, evaluation, the ablation grid,
//! gradient checks and report emission.

pub mod ablation;
pub mod config;
pub mod eval;
pub mod gradcheck;
pub mod report;

pub use ablation::{audit_cell, personalization, run_ablation, AblationCell, Toggles, ABLATION_GRID};
pub use config::{rendering_map, ExperimentConfig, SEED_ENV};
pub use eval::{evaluate_segmentation, evaluate_transfer, fused_seg_probs};
pub use gradcheck::{gradcheck, GradcheckOutcome, GRADCHECK_TOL, TARGETS};
pub use report::{emit_report, ExperimentReport, ReportFiles};
