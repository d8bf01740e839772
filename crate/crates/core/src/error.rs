use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward() called twice on the same graph")]
    BackwardTwice,

    #[error("backward() requires a scalar loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("degenerate neighborhood: {what} {index} has no unmasked entries")]
    DegenerateNeighborhood { what: &'static str, index: usize },

    #[error("format error in {path} at byte {offset}: {detail}")]
    Format {
        path: String,
        offset: u64,
        detail: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training aborted at epoch {epoch}: non-finite loss (total={total}, hgl={hgl}, ce={ce})")]
    NonFiniteLoss {
        epoch: usize,
        total: f64,
        hgl: f64,
        ce: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Exit code contract for the CLI: 1 for configuration problems, 2 for
    /// runtime/numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Format { .. } => 1,
            _ => 2,
        }
    }
}
