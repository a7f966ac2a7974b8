use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("contour has no voiced frames")]
    NoVoicing,
    #[error("validation error: {0}")]
    Validation(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("infeasible alignment: {labels} labels cannot fit {frames} encoded frames")]
    InfeasibleAlignment { labels: usize, frames: usize },
    #[error("input too short: {frames} frames, need at least {min}")]
    InputTooShort { frames: usize, min: usize },
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
