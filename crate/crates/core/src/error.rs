use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid input model: {0}")]
    InvalidModel(String),

    #[error("sobol sampler supports at most {max} dimensions, requested {requested}")]
    UnsupportedDimension { requested: usize, max: usize },

    #[error("matrix is not positive definite (pivot {pivot}): {context}")]
    NotPositiveDefinite { pivot: usize, context: String },

    #[error("duplicate training inputs at rows {first} and {second}; the correlation matrix is singular")]
    DegenerateTrainingData { first: usize, second: usize },

    #[error("ill-conditioned trend system: {0}")]
    Conditioning(String),

    #[error("hyperparameter optimization failed: {0}")]
    Optimization(String),

    #[error("insufficient probability mass: total {total} < required {required}")]
    InsufficientMass { total: f64, required: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("dataset lookup failed: no row matches {0}")]
    DatasetMiss(String),

    #[error("model evaluation failed: {message}")]
    Evaluation { message: String, diagnostics: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("artifact incompatible: {0}")]
    IncompatibleArtifact(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
