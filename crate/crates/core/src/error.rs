use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate shape: all points coincide")]
    DegenerateShape,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("unsupported dimension {0} (expected 2 or 3)")]
    UnsupportedDim(usize),
    #[error("point set is empty")]
    EmptySet,
    #[error("reference point set is empty")]
    EmptyReference,
    #[error("non-finite coordinate at point {0}")]
    NonFiniteCoordinate(usize),
    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("k = {k} is invalid for {n} points")]
    KTooLarge { k: usize, n: usize },
    #[error("unknown base shape `{0}`")]
    UnknownShape(String),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("noise level {0} out of range")]
    LevelOutOfRange(f64),
    #[error("only {left} points would remain (need at least 4)")]
    TooFewPointsLeft { left: usize },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("batch of {0} rows is too small for batch normalization")]
    BatchTooSmall(usize),
    #[error("loss must be a 1x1 tensor, got {0}x{1}")]
    NonScalarLoss(usize, usize),
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("clip threshold must be positive, got {0}")]
    NonPositiveClip(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
