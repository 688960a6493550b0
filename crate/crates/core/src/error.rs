use thiserror::Error;

/// Errors raised across the crate.
///
/// The split between [`RdpError::is_config`] and the numerical variants is what
/// the CLI maps onto exit codes 2 and 3.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RdpError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("failed to converge: {0}")]
    NonConvergence(String),

    #[error("root bracketing failed: {0}")]
    Bracket(String),

    #[error("empty feasible grid: {0}")]
    EmptyGrid(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl RdpError {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            RdpError::Domain(_)
                | RdpError::InvalidInput(_)
                | RdpError::DimensionMismatch { .. }
                | RdpError::NotSymmetric(_)
                | RdpError::NotPositiveDefinite(_)
                | RdpError::Config(_)
        )
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RdpError::Domain(_) => "domain",
            RdpError::InvalidInput(_) => "invalid_input",
            RdpError::DimensionMismatch { .. } => "dimension_mismatch",
            RdpError::NotSymmetric(_) => "not_symmetric",
            RdpError::NotPositiveDefinite(_) => "not_positive_definite",
            RdpError::Infeasible(_) => "infeasible",
            RdpError::NonConvergence(_) => "non_convergence",
            RdpError::Bracket(_) => "bracket",
            RdpError::EmptyGrid(_) => "empty_grid",
            RdpError::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, RdpError>;

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(RdpError::InvalidInput(format!("{name} must be positive and finite, got {value}")))
    }
}

pub(crate) fn ensure_nonnegative(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(RdpError::InvalidInput(format!("{name} must be non-negative and finite, got {value}")))
    }
}
