use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("path delay {delay_samples:.3} samples exceeds the unambiguous span of {span_samples} samples")]
    AliasedDelay { delay_samples: f64, span_samples: usize },

    #[error("transmit symbol is zero on active subcarrier {subcarrier} of symbol {symbol}")]
    ZeroPilot { subcarrier: usize, symbol: usize },

    #[error("delay profile has no peak")]
    NoPeak,

    #[error("synchronization failed: correlation peak {peak:.3e} below {threshold:.3e}")]
    SyncFailure { peak: f64, threshold: f64 },

    #[error("scan matching failed: {0}")]
    NoMatch(String),

    #[error("pose graph is not connected ({reached} of {total} nodes reachable from the anchor)")]
    DisconnectedGraph { reached: usize, total: usize },

    #[error("information matrix of edge {edge} is not symmetric positive-definite")]
    NotPositiveDefinite { edge: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
