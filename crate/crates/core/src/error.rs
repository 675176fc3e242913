use num_complex::Complex64;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("operator is singular at lambda = {lambda}; node lies on the spectrum")]
    OnSpectrum { lambda: Complex64 },

    #[error("lambda = {lambda} is too close to the essential spectrum (spectral gap {gap:.3e})")]
    EssentialSpectrum { lambda: Complex64, gap: f64 },

    #[error("ill-conditioned asymptotic splitting at lambda = {lambda}: expected {expected} stable eigenvalues, found {found}")]
    Splitting {
        lambda: Complex64,
        expected: usize,
        found: usize,
    },

    #[error("contour too coarse: {0}")]
    ContourTooCoarse(String),

    #[error("winding number inconclusive: {0}")]
    Winding(String),

    #[error("zero at lambda = {lambda} is not simple")]
    NonSimpleZero { lambda: Complex64 },

    #[error("basis alignment failed: overlap {overlap:.3} below threshold")]
    Alignment { overlap: f64 },

    #[error("reconstruction basis is degenerate: {0}")]
    DegenerateBasis(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::NonFinite(_) | Error::Dimension(_) | Error::Config(_) => "config",
            Error::Io(_) | Error::Serde(_) => "io",
            Error::OnSpectrum { .. } | Error::Singular(_) => "on-spectrum",
            Error::EssentialSpectrum { .. } => "essential-spectrum",
            Error::Splitting { .. } => "splitting",
            Error::ContourTooCoarse(_) => "contour",
            Error::Winding(_) => "winding",
            Error::NonSimpleZero { .. } => "non-simple-zero",
            Error::Alignment { .. } | Error::DegenerateBasis(_) => "basis",
            Error::NoConvergence { .. } => "convergence",
        }
    }
}
