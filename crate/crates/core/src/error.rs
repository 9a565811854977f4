use thiserror::Error;

/// Errors raised by the simulation, estimation and variational layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("out of regime: {0}")]
    OutOfRegime(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(value: f64, what: &'static str) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn ensure_positive(value: f64, what: &'static str) -> Result<()> {
    ensure_finite(value, what)?;
    if value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} must be > 0, got {value}")))
    }
}
