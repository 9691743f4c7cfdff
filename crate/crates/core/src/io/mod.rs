//! Bit-exact readers and writers for volumes, manifests, checkpoints and logs.

pub mod checkpoint;
pub mod log;
pub mod manifest;
pub mod raw;

pub use checkpoint::{file_hash, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, LoadOptions};
pub use log::{read_log, EpochRecord, JsonlLog};
pub use manifest::{load_manifest, DatasetManifest, IndividualEntry, ModalityEntry, SeedTable, Split, MANIFEST_FILE};
pub use raw::{read_labels, read_volume, write_labels, write_volume};
