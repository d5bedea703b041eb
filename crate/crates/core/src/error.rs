use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid RLE: {0}")]
    InvalidRle(String),
    #[error("similarity at ({row}, {col}) is not finite")]
    NonFiniteSimilarity { row: usize, col: usize },
    #[error("non-finite value in {0}")]
    NonFiniteInput(&'static str),
    #[error("clips share no overlapping frame")]
    NoOverlap,
    #[error("no stored state and no current observation")]
    NoObservation,
    #[error("appearance embedding has zero norm")]
    DegenerateEmbedding,
    #[error("global id {0} matched more than once in one update")]
    DuplicateMatch(u64),
    #[error("malformed clip sequence: {0}")]
    ClipSequence(String),
    #[error("invalid scenario: {0}")]
    Spec(String),
    #[error("invalid tracker config: {0}")]
    Config(String),
    #[error("frame range mismatch: tracks cover {tracks} frames, ground truth {gt}")]
    RangeMismatch { tracks: usize, gt: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
