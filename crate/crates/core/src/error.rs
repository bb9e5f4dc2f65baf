use thiserror::Error;

use crate::equilibrium::EquilibriumState;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid benefit function: {0}")]
    InvalidBenefit(String),

    #[error("invalid market: {0}")]
    InvalidMarket(String),

    #[error("market rejected: {0}")]
    AssumptionViolated(String),

    #[error("best-response iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        best: Box<EquilibriumState>,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("no root of p*D(p) = c found: {0}")]
    NoRoot(String),

    #[error("no clearing price on [0, {p_upper}]")]
    NoClearing { p_upper: f64 },

    #[error("regime mismatch at p={price}: price interval says {by_price}, equilibrium says {by_state}")]
    InconsistentRegime {
        price: f64,
        by_price: String,
        by_state: String,
    },

    #[error("cross-check mismatch: {what}: analytic {analytic} vs searched {searched}")]
    CrossCheckMismatch { what: String, analytic: f64, searched: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("duplicate private values: {0}")]
    DuplicateValues(String),

    #[error("oracle did not converge after {0} rounds")]
    OracleNonConvergence(usize),

    #[error("scenario: {0}")]
    Scenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numeric failures (solver did not settle, cross-checks disagree) as
    /// opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Numeric(_)
                | Error::NoClearing { .. }
                | Error::InconsistentRegime { .. }
                | Error::CrossCheckMismatch { .. }
                | Error::OracleNonConvergence(_)
        )
    }
}
