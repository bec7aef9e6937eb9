use std::path::PathBuf;

/// Errors raised by the simulation, statistics and harness layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("chain diverged at step {step} (|w| = {norm:e})")]
    Divergence { step: usize, norm: f64, state: Vec<f64> },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("trajectory was recorded without a noise log")]
    MissingNoiseLog,

    #[error("stein field does not provide a hessian")]
    MissingHessian,

    #[error("diagnostic failed: {0}")]
    Diagnostic(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
