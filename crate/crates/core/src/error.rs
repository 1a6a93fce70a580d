use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown support condition `{0}`")]
    UnknownCondition(String),
    #[error("volume fraction {0} outside (0, 1]")]
    InvalidVolumeFraction(f64),
    #[error("invalid material model: {0}")]
    InvalidMaterial(String),
    #[error("field is {got_w}x{got_h} but the problem grid is {want_w}x{want_h}")]
    ShapeMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("stiffness system is not positive definite: {0}")]
    SingularSystem(String),
    #[error("optimality-criteria bisection failed: {0}")]
    Bisection(String),
    #[error("field cannot be binarized: all {0} samples share one gray level")]
    DegenerateHistogram(usize),
    #[error("support height undefined: leftmost designable column of `{0}` is void")]
    VoidSupportColumn(String),
    #[error("criterion {0} has zero variance over the dataset")]
    ZeroVariance(&'static str),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("cluster set must have at least two labels, got {0:?}")]
    SingletonClusterSet(Vec<usize>),
    #[error("partition side {0:?} has no samples")]
    EmptyPartitionSide(Vec<usize>),
    #[error("logistic fit did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NoConvergence {
        iterations: usize,
        grad_norm: f64,
        /// Best iterate reached.
        weights: Vec<f64>,
    },
    #[error("every candidate split failed to fit")]
    AllSplitsFailed,
    #[error("cluster label {0} is missing from the labeled points")]
    MissingLabel(usize),
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
