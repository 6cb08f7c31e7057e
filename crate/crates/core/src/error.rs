use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("ingestion error at {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("task {task} is not applicable to dataset {dataset}")]
    NotApplicable { task: String, dataset: String },

    /// The sample has no usable foreground for the requested task; callers
    /// draw another sample.
    #[error("skip instance: {0}")]
    SkipInstance(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("optimizer state error: {0}")]
    State(String),

    #[error("version mismatch: {0}")]
    Version(String),

    #[error("import error at line {line}: {reason}")]
    Import { line: usize, reason: String },

    #[error("training failed at iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn is_skip(&self) -> bool {
        matches!(self, Error::SkipInstance(_))
    }

    /// Process exit code: 2 configuration, 3 data, 4 numeric, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Param(_) | Error::Version(_) | Error::Json(_) => 2,
            Error::Ingest { .. }
            | Error::Validation(_)
            | Error::Import { .. }
            | Error::Image(_)
            | Error::Index(_)
            | Error::NotApplicable { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Training { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
