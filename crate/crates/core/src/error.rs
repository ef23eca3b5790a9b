use thiserror::Error;

/// Errors raised across the calibration pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("no trips")]
    NoTrips,

    #[error("no GAJ+ observations for trip {trip_id}{}", camera.map(|c| format!(" camera {c}")).unwrap_or_default())]
    NoGajPlus {
        trip_id: String,
        camera: Option<char>,
    },

    #[error("model construction error: {0}")]
    Model(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("initialization failed: {0}")]
    Initialization(String),

    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error("regression error: {0}")]
    Regression(String),

    #[error("rank-deficient design: column `{0}` is collinear with earlier columns")]
    RankDeficient(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
