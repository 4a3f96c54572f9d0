use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target bandwidth {target} exceeds the grid limit {limit} (grid size {grid_size})")]
    BandwidthTooLarge {
        target: usize,
        limit: usize,
        grid_size: usize,
    },

    #[error("state is not finite")]
    NonFinite,

    #[error("integration blew up at t = {time}: max |c_n| = {max_amplitude:e} at mode n = {max_mode}")]
    BlowUp {
        time: f64,
        max_mode: i64,
        max_amplitude: f64,
    },

    #[error("estimate unusable: effective sample size {ess:.2} < {min}")]
    UnusableEstimate { ess: f64, min: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("configuration error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
