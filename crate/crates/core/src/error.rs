//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building corpora, mining knowledge,
/// training, scoring, or evaluating.
#[derive(Debug, Error)]
pub enum Error {
    /// No usable training data (empty stream, empty vocabulary, zero pairs).
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    /// A knowledge matrix ended up with zero retained pairs.
    #[error("empty knowledge: {0}")]
    EmptyKnowledge(String),

    /// Shapes of matrices/vectors/configs disagree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A caller-supplied argument is out of range or inconsistent.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An input file violates its schema; `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A computation produced non-finite values or an impossible factorization.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The objective ran away; the step size (or knowledge weight) is too large.
    #[error("training diverged: |objective| reached {objective:.3e}; lower gamma (or alpha/beta)")]
    Divergence { objective: f64 },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Helper for schema violations tied to a source line.
    pub fn parse(path: &std::path::Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }
}
