use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty dataset")]
    EmptyDataset,

    #[error("too many neighbors: p = {p} but only {n} points")]
    TooManyNeighbors { p: usize, n: usize },

    #[error("adjacency not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),

    #[error("identity holds for signed degrees only")]
    NeedsSignedDegrees,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("index {index} out of range for size {len}")]
    Index { index: usize, len: usize },

    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("probability {0} outside [0, 1]")]
    Probability(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("signed graph requires labels")]
    MissingLabels,

    #[error("diverged")]
    Diverged,

    #[error("too large for enumeration: {bits} free bits (cap {cap})")]
    TooLarge { bits: usize, cap: usize },

    #[error("not an IDX image file")]
    NotIdxImages,

    #[error("not an IDX label file")]
    NotIdxLabels,

    #[error("unexpected end of file")]
    UnexpectedEof,

    #[error("invalid label {0}")]
    InvalidLabel(u8),

    #[error("not a checkpoint")]
    NotCheckpoint,

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("insufficient examples of class {class}: need {need}, have {have}")]
    Insufficient { class: u8, need: usize, have: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
