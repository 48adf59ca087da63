use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("records are not sorted by timestamp: record {position} is earlier than record {}", position - 1)]
    Unsorted { position: usize },
    #[error("missing {channel} at point {index}")]
    MissingChannel { channel: &'static str, index: usize },
    #[error("labels require trajectory")]
    NoTrajectory,
    #[error("unknown road type code {0:?}")]
    UnknownRoadType(String),
    #[error("unknown segment id {0:?}")]
    UnknownSegment(String),
    #[error("unknown vehicle type {0:?}")]
    UnknownVehicleType(String),
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    /// True for errors caused by the input data rather than the model or
    /// environment.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Json(_)
                | Error::Csv(_)
                | Error::Unsorted { .. }
                | Error::MissingChannel { .. }
                | Error::NoTrajectory
                | Error::UnknownRoadType(_)
                | Error::UnknownSegment(_)
                | Error::UnknownVehicleType(_)
                | Error::InvalidData(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
