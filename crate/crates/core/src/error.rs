use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PuirError {
    /// A caller-supplied argument or configuration violates a precondition.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("rendering map `{modality}` has no entry for tissue class {class}")]
    MissingLutEntry { modality: String, class: u8 },

    #[error("unknown modality `{0}`")]
    UnknownModality(String),

    #[error("{field}: {message}")]
    Schema { field: String, message: String },

    #[error("{path}: expected {expected} bytes, found {found}")]
    Length {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("refusing to overwrite existing {0} (pass force to replace it)")]
    WouldOverwrite(PathBuf),

    #[error("checkpoint incompatible: {0}")]
    Checkpoint(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error(transparent)]
    Autograd(#[from] puir_autograd::AutogradError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl PuirError {
    pub fn precondition(msg: impl Into<String>) -> Self {
        Self::Precondition(msg.into())
    }

    pub fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Self::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors the CLI reports with the precondition exit code.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Self::Precondition(_)
                | Self::Shape { .. }
                | Self::MissingLutEntry { .. }
                | Self::UnknownModality(_)
                | Self::Schema { .. }
                | Self::Length { .. }
                | Self::WouldOverwrite(_)
                | Self::Checkpoint(_)
                | Self::Toml(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, PuirError>;
