use std::path::PathBuf;

/// Errors produced anywhere in the ambiguity pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unreadable file {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("dimension overflow: {width}x{height}x{channels}")]
    DimensionOverflow {
        width: usize,
        height: usize,
        channels: usize,
    },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },

    #[error("image too small: {0}")]
    ImageTooSmall(String),

    #[error("unknown fixture kind `{0}`")]
    UnknownFixture(String),

    #[error("unknown distortion `{0}`")]
    UnknownDistortion(String),

    #[error("level {level} out of range 1..={levels}")]
    LevelOutOfRange { level: usize, levels: usize },

    #[error("blur kernel radius {radius} does not fit a {width}x{height} image")]
    KernelTooLarge { radius: usize, width: usize, height: usize },

    #[error("invalid viewing conditions: {0}")]
    InvalidViewingConditions(String),

    #[error("invalid VDP parameters: {0}")]
    InvalidVdpParameters(String),

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("missing score for {0}")]
    MissingScore(String),

    #[error("all windows degenerate")]
    AllWindowsDegenerate,

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("duplicate key {0}")]
    DuplicateKey(String),

    #[error("non-finite score for {0}")]
    NonFiniteScore(String),

    #[error("score/ladder length mismatch: {scores} scores for {rungs} rungs")]
    LengthMismatch { scores: usize, rungs: usize },

    #[error("degenerate normalization range: all scores equal {0}")]
    DegenerateRange(f64),

    #[error("empty sample: no uncensored widths")]
    EmptySample,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by invalid input rather than by a failing computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::UnreadableFile { .. }
                | Error::UnsupportedFormat(_)
                | Error::UnknownFixture(_)
                | Error::UnknownDistortion(_)
                | Error::LevelOutOfRange { .. }
                | Error::InvalidViewingConditions(_)
                | Error::InvalidVdpParameters(_)
                | Error::UnknownMetric(_)
                | Error::Schema(_)
                | Error::DuplicateKey(_)
                | Error::NonFiniteScore(_)
                | Error::DimensionMismatch { .. }
                | Error::Config(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
