use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class {class} has {available} samples, {required} required")]
    InsufficientSamples {
        class: u32,
        available: usize,
        required: usize,
    },

    #[error("class {class}: cannot select {m} of {pool} candidates")]
    SelectionTooLarge { class: u32, m: usize, pool: usize },

    #[error("class mismatch: {0}")]
    ClassMismatch(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("config hash mismatch: existing results use {existing}, current config is {current}")]
    HashMismatch { existing: String, current: String },

    #[error("io error at {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// Stable machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Numerical(_) => "numerical",
            Error::Shape(_) => "shape",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::SelectionTooLarge { .. } => "selection_too_large",
            Error::ClassMismatch(_) => "class_mismatch",
            Error::Diverged { .. } => "diverged",
            Error::Empty(_) => "empty",
            Error::Format { .. } => "format",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
