use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("operator is not Hermitian (max |M - M^dagger| = {0:.3e})")]
    NotHermitian(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("properness: {0}")]
    Properness(String),

    #[error("marginal spectrum: {0}")]
    MarginalSpectrum(String),

    #[error("not a power spectral density: {0}")]
    NotAPsd(String),

    #[error("stability: {0}")]
    Stability(String),

    #[error("controllability: {0}")]
    Controllability(String),

    #[error("filter infeasible: {0}")]
    FilterInfeasible(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("step size too large: trace drifted by {drift:.3e} at t = {t}; reduce dt")]
    StepSize { drift: f64, t: f64 },

    #[error("integration failure: minimum eigenvalue {min_eig:.3e} at t = {t}; reduce dt")]
    Positivity { min_eig: f64, t: f64 },

    #[error("steady state is not unique: {0}")]
    NonUniqueSteadyState(String),

    #[error("fit failed after {iterations} iterations (rms residual {rms:.3e}): {reason}")]
    FitFailure {
        iterations: usize,
        rms: f64,
        reason: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for errors raised while validating a PSD, before any factorization.
    pub fn is_psd_validation(&self) -> bool {
        matches!(
            self,
            Error::Properness(_) | Error::NotAPsd(_) | Error::InvalidParameter(_)
        )
    }
}
