use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pgm decode error at byte {offset}: {msg}")]
    Decode { offset: usize, msg: String },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid dimensions {width}x{height}: {msg}")]
    InvalidDims { width: usize, height: usize, msg: String },

    #[error("singular transform (det = {0})")]
    SingularTransform(f64),

    #[error("degenerate annotation: {0}")]
    DegenerateAnnotation(String),

    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("all pixels are ignored")]
    AllIgnored,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss on sample {0}")]
    NonFiniteLoss(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
