use std::fmt;

use thiserror::Error;

use crate::ocp::OuterReport;
use crate::stepper::PicardReport;

/// Which sweep a failed time step belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    State,
    Adjoint,
}

impl fmt::Display for StepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepKind::State => write!(f, "state"),
            StepKind::Adjoint => write!(f, "adjoint"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solve failed ({method}): relative residual {residual:.3e} after {iterations} iterations")]
    SolverFailure {
        method: &'static str,
        residual: f64,
        iterations: usize,
    },

    #[error(
        "{kind} step at time level {level} (t = {time}) did not converge: \
         {} iterations, increment {:.3e}",
        report.iterations,
        report.increment
    )]
    StepFailure {
        kind: StepKind,
        level: usize,
        time: f64,
        report: PicardReport,
    },

    #[error(
        "outer fixed point did not converge within {} iterations (last max metric {:.3e})",
        report.iterations,
        report.last_max_metric()
    )]
    OuterNonConvergence { report: Box<OuterReport> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of an iterative process to reach its tolerance, as
    /// opposed to malformed input.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(
            self,
            Error::SolverFailure { .. } | Error::StepFailure { .. } | Error::OuterNonConvergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
