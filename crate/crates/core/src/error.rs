use thiserror::Error;

#[derive(Debug, Error)]
pub enum O2capError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("label error: {0}")]
    Label(String),

    #[error("initialization error: {0}")]
    Init(String),

    #[error("empty training set: all instances were discarded as outliers")]
    EmptyTrainingSet,

    #[error("degenerate loss: {0}")]
    DegenerateLoss(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, O2capError>;
