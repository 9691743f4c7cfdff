//! Synthetic multi-individual, multi-modal phantoms with known anatomy.

pub mod augment;
pub mod dataset;
pub mod profile;
pub mod render;
pub mod rotation;

pub use augment::{augment, augment_with_params, AugConfig, AugParams};
pub use dataset::{generate_dataset, generate_individual, GenConfig, MultiModalSample};
pub use profile::{sample_profile, AnatomyConfig, BiologicalProfile, BlobSpec, BodySpec};
pub use render::{render_modality, ModalityKind, RenderingMap};
pub use rotation::{apply_rotation, invert_rotation, RotationTransform};
