use thiserror::Error;

/// Errors raised by simulation, regression and the backward solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("non-finite regression target for `{target}` on path {path} at step {step}")]
    NonFiniteTarget {
        target: &'static str,
        path: usize,
        step: usize,
    },

    #[error("path cloud does not match the time grid: {0}")]
    GridMismatch(String),

    #[error("the modified solver needs shadow steps; call simulate_shadow_steps first")]
    MissingShadow,

    #[error("path cloud already carries shadow steps")]
    ShadowPresent,

    #[error("clamp level C_y must be positive and finite, got {0}")]
    DegenerateClamp(f64),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
