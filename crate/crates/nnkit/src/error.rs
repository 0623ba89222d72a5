use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("invalid input to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NnError {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        NnError::Shape { op, left, right }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        NnError::Invalid {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
