use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate shape {index}: all landmark points coincide")]
    DegenerateShape { index: usize },

    #[error("ill-posed problem: {0}")]
    IllPosed(String),

    #[error("degenerate responses for neuron {neuron}: response sum {sum:e} vanishes")]
    DegenerateResponses { neuron: String, sum: f64 },

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("stimulus `{0}` is not present in the response matrix")]
    MissingStimulus(String),

    #[error("only one label class present; need both same and different pairs")]
    SingleClass,

    #[error("fixed point not reached for neuron {neuron} after {redraws} redraws")]
    FixedPointFailure { neuron: usize, redraws: usize },

    #[error("rejection sampling failed after {attempts} attempts: {reason}")]
    RejectionFailure { attempts: usize, reason: String },

    #[error("malformed file {path}: {location}: {message}")]
    MalformedFile {
        path: String,
        location: String,
        message: String,
    },

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("partition `{scheme}` leaves the {side} split empty")]
    EmptySplit { scheme: String, side: &'static str },

    #[error("too few items ({items}) for {folds} folds")]
    TooFewItems { items: usize, folds: usize },

    #[error("train/test leakage: stimulus `{0}` appears in both splits")]
    Leakage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(
        path: impl std::fmt::Display,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::MalformedFile {
            path: path.to_string(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Json(_) => ErrorClass::Config,
            Error::IllPosed(_)
            | Error::DegenerateResponses { .. }
            | Error::ZeroVariance(_)
            | Error::Divergence(_)
            | Error::FixedPointFailure { .. }
            | Error::RejectionFailure { .. }
            | Error::NonFinite(_) => ErrorClass::Numerical,
            Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}

/// Attaches a pipeline stage label to an error.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
