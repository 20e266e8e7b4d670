use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not agree; `op` names the kernel or pipeline stage.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    Shape {
        shape: Vec<usize>,
        reason: &'static str,
    },

    #[error("schedule error at step {step}: {msg}")]
    Schedule { step: usize, msg: String },

    /// Malformed bundle, feature or report bytes.
    #[error("format error: {0}")]
    Format(String),

    /// Well-formed inputs that disagree with each other.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A state matrix entry that would make the recurrence diverge.
    #[error("stability error: {0}")]
    Stability(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
