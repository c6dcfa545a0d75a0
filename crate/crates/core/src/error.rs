use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("root search did not converge after {iterations} iterations (last bracket [{lo}, {hi}])")]
    NonConvergence { iterations: usize, lo: f64, hi: f64 },

    #[error("degenerate ensemble: normalizing statistic {statistic:e} is not usable")]
    DegenerateEnsemble { statistic: f64 },

    #[error("moment overflow at t = {time}: {value:e} exceeds 1e300")]
    Overflow { time: f64, value: f64 },

    #[error("invalid frequency grid: {0}")]
    Grid(String),

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error("insufficient tail data: {found} nonempty bins in range, need at least 5")]
    InsufficientTailData { found: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::DegenerateEnsemble { .. }
                | Error::Overflow { .. }
                | Error::Fit(_)
                | Error::InsufficientTailData { .. }
        )
    }

    /// Process exit status: 1 for I/O, 3 for numerical failures, 2 for
    /// everything attributable to the configuration.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Json(_) => 1,
            e if e.is_numerical() => 3,
            _ => 2,
        }
    }
}
