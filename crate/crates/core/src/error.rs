use thiserror::Error;

use crate::controller::StepDiagnostics;
use crate::stats::Ensemble;

/// Errors raised anywhere in the digital-twin pipeline.
#[derive(Debug, Error)]
pub enum TwinError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A configuration value violates an invariant. `key` names the offending setting.
    #[error("invalid value for `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error(
        "sinkhorn scaling did not converge after {iterations} iterations (residual {residual:.3e})"
    )]
    SinkhornDiverged { iterations: usize, residual: f64 },

    /// NaN or infinity appeared while advancing the twin.
    #[error("non-finite value in {quantity}")]
    NonFinite {
        quantity: String,
        diagnostics: Box<StepDiagnostics>,
        snapshot: Box<Ensemble>,
    },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<TwinError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TwinError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        TwinError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn at_step(self, step: usize) -> Self {
        match self {
            already @ TwinError::AtStep { .. } => already,
            other => TwinError::AtStep {
                step,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, skipping step annotations.
    pub fn root(&self) -> &TwinError {
        match self {
            TwinError::AtStep { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self.root(), TwinError::Config { .. } | TwinError::Usage(_))
    }
}

pub type Result<T> = std::result::Result<T, TwinError>;
