//! Crate-wide error type.

/// Errors produced by the simulator.
///
/// `Config` covers invalid experiment setup (bad dimensions, bad hyperparameter
/// ranges, malformed files); `Usage` covers contract violations at call sites
/// (shape mismatches, empty inputs, out-of-range arguments). `Diverged` carries
/// the round at which a non-finite training loss was first observed.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("training diverged at round {round}: {detail}")]
    Diverged { round: usize, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
