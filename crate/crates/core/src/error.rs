use thiserror::Error;

#[derive(Debug, Error)]
pub enum FssError {
    #[error("invalid segment [{start}, {end})")]
    InvalidSegment { start: usize, end: usize },
    #[error("character {0:?} is not in the fingerspelling alphabet")]
    UnknownSymbol(char),
    #[error("empty text where a word is required")]
    EmptyText,
    #[error("empty reference text")]
    EmptyReference,
    #[error("invalid clip {id}: {msg}")]
    InvalidClip { id: String, msg: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("duplicate entry {0:?}")]
    Duplicate(String),
    #[error("clip of {len} frames is shorter than the minimum {min}")]
    ClipTooShort { len: usize, min: usize },
    #[error("target of {needed} frames does not fit in {frames} frames")]
    TargetTooLong { needed: usize, frames: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Nn(#[from] fss_nnkit::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FssError> = std::result::Result<T, E>;
