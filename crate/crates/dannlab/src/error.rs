use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A layer stack or model was asked to do something its shapes do not allow.
    #[error("configuration error in {location}: {message}")]
    Config { location: String, message: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate channel {channel}: standard deviation {std:e} is below {threshold:e}")]
    DegenerateChannel { channel: usize, std: f64, threshold: f64 },

    #[error("{path}: format error at byte {offset}: {message}")]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f32 },

    /// No multi-start candidate converged; `best` carries the lowest-RMSE
    /// candidate anyway so callers can inspect it.
    #[error("fit did not converge from any start (best rmse {:e})", .best.rmse)]
    FitFailed { best: Box<crate::harness::FitResult> },

    #[error("invalid experiment configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn input(message: impl Into<String>) -> Self {
        Error::Input(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
