use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("construction error: {0}")]
    Construction(String),

    #[error("spec is not calibrated")]
    Uncalibrated,

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("no risk crossing in bracket [{lo}, {hi}]: risk({lo}) = {risk_lo}, risk({hi}) = {risk_hi}")]
    Bracket {
        lo: f64,
        hi: f64,
        risk_lo: f64,
        risk_hi: f64,
    },

    #[error("parameter regime violated: {0}")]
    Regime(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("unregistered mechanism: {0}")]
    Unregistered(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Regime(_) => 3,
            Error::Bracket { .. } | Error::Numerical(_) => 4,
            _ => 2,
        }
    }
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
