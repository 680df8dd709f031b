use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("position ({x:.3e}, {y:.3e}, {z:.3e}) m is outside the field region of interest")]
    OutOfBounds { x: f64, y: f64, z: f64 },

    #[error("electron left the region of interest at t = {t:.6e} s, r = ({x:.3e}, {y:.3e}, {z:.3e}) m")]
    Escape { t: f64, x: f64, y: f64, z: f64 },

    #[error("integration failed at t = {t:.6e} s: {reason}")]
    Integration { t: f64, reason: String },

    #[error("spectrum error: {0}")]
    Spectrum(String),

    #[error("coefficient file, line {line}: {reason}")]
    CoefficientFile { line: usize, reason: String },

    #[error("trajectory file: {0}")]
    TrajectoryFile(String),

    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` is neither `Clone` nor `PartialEq`; keep its rendered form.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct IoError(pub String);

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(IoError(e.to_string()))
    }
}

pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {value}"),
        })
    }
}

pub(crate) fn require_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and >= 0, got {value}"),
        })
    }
}
