use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {index} has {got} pixels, expected {expected}")]
    SampleShape { index: usize, got: usize, expected: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch} (kl={kl}, rec={rec}); lower the learning rate or reseed")]
    NonFiniteLoss { epoch: usize, kl: f64, rec: f64 },
    #[error("gaussian mixture component {0} captures no points")]
    EmptyComponent(usize),
    #[error("latent vector has length {got}, model dimension is {expected}")]
    LatentDim { got: usize, expected: usize },
    #[error("latent vector has a non-finite entry")]
    NonFiniteLatent,
    #[error("prior has {got_k} components of dimension {got_d}, expected {want_k} x {want_d}")]
    PriorShape { got_k: usize, got_d: usize, want_k: usize, want_d: usize },
    #[error("malformed weights file: {0}")]
    Weights(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
