use thiserror::Error;

/// Errors raised by the workbench.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside the domain of the operation.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// A velocity quadruple violates momentum or energy resonance.
    #[error("quadruple is off the resonant manifold (momentum residual {momentum:e}, energy residual {energy:e})")]
    OffManifold { momentum: f64, energy: f64 },

    /// The Picard iteration did not reach its tolerance.
    #[error("Picard iteration did not converge in {iterations} iterations (last increment {last:e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        increments: Vec<f64>,
    },

    /// An iterate left the ball of radius M while the theorem regime was enforced.
    #[error("contraction regime violated: {0}")]
    Regime(String),

    /// A combinatorial sweep or reduction exceeded its configured cap.
    #[error("cap exceeded: {0}")]
    CapExceeded(String),

    /// A file could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParam(msg.into()))
}
