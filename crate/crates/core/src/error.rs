use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    /// Non-finite activation observed during a forward pass.
    #[error("numeric fault in layer {layer}: {message}")]
    Numeric { layer: usize, message: String },

    #[error("training loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    /// An averaged embedding had (numerically) zero L2 norm.
    #[error("degenerate embedding: rows {rows:?} have L2 norm below 1e-12")]
    DegenerateEmbedding { rows: Vec<usize> },

    /// A feature bank contained zero vectors, which have no direction.
    #[error("degenerate features: samples {ids:?} are zero vectors")]
    DegenerateFeature { ids: Vec<usize> },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numeric { .. } | Error::NonFiniteLoss { .. } | Error::DegenerateEmbedding { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
