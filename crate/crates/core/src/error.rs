use thiserror::Error;

use crate::optimizer::BudgetStep;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the design, estimation and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter failed validation. `field` names the offending input.
    #[error("invalid {field}: {reason}")]
    InvalidInput { field: String, reason: String },

    #[error("calibration subsample too small: n = {n}, the variance formula needs n >= 4")]
    SubsampleTooSmall { n: u64 },

    #[error("design constraint violated: {0}")]
    Constraint(String),

    #[error("budget {budget} cannot fund a feasible design; minimal feasible budget is {minimal}")]
    InfeasibleBudget { budget: f64, minimal: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error(
        "replicate variance is not identifiable from group {group} (at most one direct \
         measurement per subject); supply r_delta externally"
    )]
    NotIdentifiable { group: u8 },

    #[error("pilot data, line {line}: {reason}")]
    Pilot { line: usize, reason: String },

    #[error("budget search did not converge within {} iterations", .trace.len())]
    NoConvergence { trace: Vec<BudgetStep> },

    #[error("grid has {points} points, the limit is {limit}")]
    GridTooLarge { points: usize, limit: usize },

    #[error("{failed} of {total} simulation replicates failed (limit is 1%)")]
    ReplicateFailures { failed: usize, total: usize },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidInput {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by malformed input rather than by an infeasible
    /// or degenerate problem.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidInput { .. } | Error::Pilot { .. })
    }

    /// The minimal feasible budget, when the error carries one.
    pub fn minimal_budget(&self) -> Option<f64> {
        match self {
            Error::InfeasibleBudget { minimal, .. } => Some(*minimal),
            _ => None,
        }
    }
}
