use std::fmt;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error("output root is locked by {0}; remove the lock file if no run is active")]
    Locked(String),
    #[error("missing stage output: {0}")]
    Missing(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    pub fn stage(stage: impl fmt::Display, message: impl fmt::Display) -> Self {
        Self::Stage {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }

    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            _ => 1,
        }
    }
}
