use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    /// A per-bin division would blow up: `|value|` at `bin` is below the
    /// singularity threshold.
    #[error("singular system at bin {bin} ({what})")]
    Singular { bin: usize, what: &'static str },

    #[error("linear solve failed: {0}")]
    Solver(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("leave-one-out contract violated: {0}")]
    Contract(String),

    #[error("{file}:{line}: {msg}")]
    Schema {
        file: String,
        line: u64,
        msg: String,
    },

    #[error("unknown set: subject {subject}, trial {trial}")]
    UnknownSet { subject: String, trial: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures that come from the numerics rather than from the
    /// caller's data or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular { .. } | Error::Solver(_))
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
