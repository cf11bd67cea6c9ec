use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rotation: quaternion has zero norm")]
    DegenerateRotation,
    #[error("shape error: {0}")]
    Shape(String),
    #[error("point at or behind camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("parse error at record {record}: {msg}")]
    Parse { record: usize, msg: String },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("composition error at primitive {index}: {msg}")]
    Compose { index: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("backbone error: {0}")]
    Backbone(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("image error: {0}")]
    Image(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
