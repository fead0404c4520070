use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("zero extent: all points coincide")]
    ZeroExtent,
    #[error("singular scale: factor {0} is zero")]
    SingularScale(f64),
    #[error("non-finite input")]
    NonFinite,
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown shape '{name}', supported shapes: {supported}")]
    UnknownShape { name: String, supported: String },
    #[error("no point files in {0}")]
    NoPointFiles(PathBuf),
    #[error("missing labels.csv in {0}")]
    MissingLabels(PathBuf),
    #[error("label {label} out of range for {file} ({classes} classes)")]
    LabelOutOfRange {
        file: String,
        label: i64,
        classes: usize,
    },
    #[error("parse error in {file} at {location}: {message}")]
    Parse {
        file: String,
        location: String,
        message: String,
    },
    #[error("neighbourhood size {k} needs more than {n} points")]
    TooFewPoints { k: usize, n: usize },
    #[error("asymmetric adjacency at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, trace: Vec<f64> },
    #[error("degenerate after SOR: every point was removed")]
    DegenerateAfterSor,
    #[error("transfer model classifies no clean sample correctly")]
    NoCorrectSamples,
    #[error("empty split: {0}")]
    EmptySplit(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
