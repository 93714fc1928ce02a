use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("missing split definition: {0}")]
    MissingSplit(PathBuf),

    #[error("malformed dataset layout: {0}")]
    Layout(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{0}")]
    Loss(String),

    #[error("loss term `{term}` is not finite ({value})")]
    NonFinite { term: &'static str, value: f64 },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training aborted at epoch {epoch}, step {step}: {source}; last good checkpoint: {}",
        last_good.as_ref().map_or("none".to_string(), |p| p.display().to_string()))]
    Aborted {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
        last_good: Option<PathBuf>,
    },

    #[error("toml: {0}")]
    Toml(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

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
