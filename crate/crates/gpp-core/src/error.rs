//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    /// A user-supplied argument or configuration value is invalid.
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument {
        /// Offending parameter name.
        name: &'static str,
        /// Human-readable explanation.
        reason: String,
    },

    /// The regression normal equations are numerically singular.
    #[error("ill-conditioned fit; supply ridge > 0")]
    IllConditionedFit,

    /// A simulated quantity became NaN or infinite.
    #[error("non-finite {quantity} at epoch {epoch}, time step {step}")]
    NonFinite {
        /// What blew up (state, adjoint, target, ...).
        quantity: &'static str,
        /// 1-based training epoch.
        epoch: usize,
        /// Time-step index within the epoch.
        step: usize,
    },

    /// Unknown benchmark problem id.
    #[error("unknown problem `{0}` (try `list-problems`)")]
    UnknownProblem(String),

    /// Problem/configuration mismatch (dimensions, mode, case id).
    #[error("configuration error: {0}")]
    Config(String),

    /// Policy file (de)serialization failure.
    #[error("policy file error: {0}")]
    PolicyFile(String),
}

/// Convenience alias.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for [`Error::InvalidArgument`].
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }

    /// Stamps the training epoch onto a step-level numerical error.
    ///
    /// The engine reports blow-ups with epoch 0 because it has no notion of
    /// the outer training loop; the solver rewrites the epoch on the way up.
    pub fn at_epoch(self, epoch: usize) -> Self {
        match self {
            Error::NonFinite { quantity, step, .. } => Error::NonFinite {
                quantity,
                epoch,
                step,
            },
            other => other,
        }
    }
}
