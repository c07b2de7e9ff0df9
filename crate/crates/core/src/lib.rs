//! Numerical toolkit for the local eigenvalue statistics of Wigner-type
//! random matrices near cusp singularities of the density of states.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] describes variance profiles and their validation,
//! * [`dyson`] solves the vector Dyson equation and produces densities,
//! * [`shape`] locates singularities and fits their universal shapes,
//! * [`flow`] evaluates the free convolution with a semicircle,
//! * [`pearcey`] computes Pearcey and finite-N correlation kernels,
//! * [`ensemble`] samples matrices and compares their statistics,
//! * [`verify`] bundles the quantitative checks used by the acceptance suite.

pub mod dyson;
pub mod ensemble;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod pearcey;
pub mod quad;
pub mod shape;
pub mod verify;

pub use num_complex::Complex64;

/// Library-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("model validation failed: {0}")]
    Validation(String),

    #[error("spectral parameter outside the domain: {0}")]
    Domain(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    Divergence { iterations: usize, residual: f64 },

    #[error("near-singular linear system: {0}")]
    NearSingular(String),

    #[error(
        "empty support: threshold {threshold:.3e} is at or above the maximal density {max:.3e}"
    )]
    EmptySupport { threshold: f64, max: f64 },

    #[error("no singularity could be classified: {0}")]
    Unclassifiable(String),

    #[error("gap closed: {0}")]
    GapClosed(String),

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("accuracy target {target:.1e} missed (estimated error {estimate:.3e})")]
    Accuracy { target: f64, estimate: f64 },

    #[error("contour conflict: {0}")]
    ContourConflict(String),

    #[error("unsupported entry law: {0}")]
    UnsupportedLaw(String),

    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_)
                | Error::Validation(_)
                | Error::Domain(_)
                | Error::UnsupportedLaw(_)
                | Error::Parse(_)
                | Error::ContourConflict(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}

/// Version of this crate.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
