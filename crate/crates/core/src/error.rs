use thiserror::Error;

pub type Result<T> = std::result::Result<T, FlocError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlocError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("singular design: all design times are equal")]
    SingularDesign,

    #[error("degenerate scale: historical segment has zero variance")]
    DegenerateScale,

    #[error("detector already stopped at observation {0}")]
    Stopped(usize),

    #[error("target level {eta} is below the resolution 1/{replications} of the calibration sample")]
    CalibrationResolution { eta: f64, replications: usize },

    #[error("snapshot decode error: {0}")]
    Decode(String),
}

impl FlocError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FlocError::InvalidArgument(msg.into())
    }
}
