use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the numeric, data, model and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input to {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown out-of-distribution recipe `{0}`")]
    UnknownRecipe(String),

    #[error("bad magic in {context}: expected {expected}")]
    BadMagic {
        context: &'static str,
        expected: &'static str,
    },

    #[error("unsupported {context} version {found} (expected {expected})")]
    VersionMismatch {
        context: &'static str,
        found: u16,
        expected: u16,
    },

    #[error("unsupported dtype {found} (only f32 = 1 is supported)")]
    BadDtype { found: u8 },

    #[error("truncated payload in {context}: needed {needed} bytes, had {available}")]
    Truncated {
        context: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("class {class} has {count} samples; at least 2 are required")]
    TooFewClassSamples { class: usize, count: usize },

    #[error("Cholesky factorization failed after regularization (eps = {eps})")]
    CholeskyFailed { eps: f64 },

    #[error("input perturbation requested but no checkpoint/inputs were supplied")]
    UnsupportedPerturbation,

    #[error("accuracy {0} is outside the invertible probit domain; shrink |mu|/sigma")]
    ProbitDomain(f64),

    #[error("degenerate ensemble: {0}")]
    DegenerateEnsemble(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
