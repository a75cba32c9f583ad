//! Error and validation-report types shared across the crate.

use std::fmt;

use thiserror::Error;

/// Outcome of checking a model against its structural invariants.
///
/// Collects every violation instead of stopping at the first one, so a
/// misconfigured model can be fixed in one pass.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    violations: Vec<String>,
}

impl ValidationReport {
    pub fn ok() -> Self {
        Self::default()
    }

    pub fn push(&mut self, violation: impl Into<String>) {
        self.violations.push(violation.into());
    }

    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[String] {
        &self.violations
    }

    /// Turns the report into a `Result`, erroring when any violation was recorded.
    pub fn into_result(self) -> std::result::Result<(), Error> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidModel(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            write!(f, "ok")
        } else {
            write!(f, "{}", self.violations.join("; "))
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("model validation failed: {0}")]
    InvalidModel(ValidationReport),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{0}")]
    Degenerate(String),

    #[error("innovation covariance numerically singular at step {step} (condition estimate {cond:.2e})")]
    SingularInnovation { step: usize, cond: f64 },

    #[error("predicted state covariance numerically singular at step {step} (condition estimate {cond:.2e})")]
    SingularPrediction { step: usize, cond: f64 },

    #[error("{context} is not invertible")]
    Singular { context: String },

    #[error("prox linear system numerically singular (condition estimate {cond:.2e})")]
    SingularProxSystem { cond: f64 },

    #[error("E-step failed at EM iteration {iteration}: {source}")]
    EStep {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
