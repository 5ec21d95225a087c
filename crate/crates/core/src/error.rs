use thiserror::Error;

use crate::bitstream::BitstreamError;
use crate::config::ConfigError;
use crate::weights::WeightsError;

#[derive(Debug, Error)]
pub enum GullError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Bitstream(#[from] BitstreamError),

    #[error(transparent)]
    Weights(#[from] WeightsError),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{what} out of range: {value} (expected {min}..={max})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    #[error("reference signal has zero energy ({0})")]
    ZeroEnergy(&'static str),

    #[error("invalid audio: {0}")]
    Audio(String),

    #[error("fixture: {0}")]
    Fixture(String),
}

pub type Result<T> = std::result::Result<T, GullError>;

pub(crate) fn check_range(what: &'static str, value: usize, min: usize, max: usize) -> Result<()> {
    if value < min || value > max {
        return Err(GullError::OutOfRange {
            what,
            value,
            min,
            max,
        });
    }
    Ok(())
}
