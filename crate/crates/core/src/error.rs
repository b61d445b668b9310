use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the core library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// Malformed mesh or buffer file. `offset` is the byte offset where parsing failed.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    /// Malformed line-oriented record file.
    #[error("parse error on line {line}: {message}")]
    ParseLine { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty mesh")]
    EmptyMesh,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing probability files for view ids {0:?}")]
    MissingViews(Vec<u32>),

    #[error("pixel ({x}, {y}) of view {view_id} cannot be normalized (sum {sum})")]
    NotNormalizable {
        view_id: u32,
        x: u32,
        y: u32,
        sum: f64,
    },

    #[error("stage rule violated: {0}")]
    StageRule(String),

    #[error("no samples to evaluate")]
    NoSamples,

    #[error("image encoding error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Short stable tag for machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } | Error::ParseLine { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::EmptyMesh => "empty_mesh",
            Error::Shape(_) => "shape",
            Error::MissingViews(_) => "missing_views",
            Error::NotNormalizable { .. } => "not_normalizable",
            Error::StageRule(_) => "stage_rule",
            Error::NoSamples => "no_samples",
            Error::Image(_) => "image",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
