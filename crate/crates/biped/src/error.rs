use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Reasons a single walking step cannot be completed.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepFailure {
    /// Stance angle rate reversed sign before touchdown.
    #[error("stance velocity reversed at q2 = {q2:.6} (t = {t:.6} s)")]
    VelocityReversal { t: f64, q2: f64 },
    /// Stance angle left the configured operating interval.
    #[error("stance angle q2 = {q2:.6} left the operating interval at t = {t:.6} s")]
    OutOfRange { t: f64, q2: f64 },
    /// Step budget of the adaptive integrator was exhausted.
    #[error("integration budget exhausted after {steps} steps (t = {t:.6} s)")]
    BudgetExhausted { t: f64, steps: usize },
    /// Post-impact flow reached touchdown again without crossing the section.
    #[error("trajectory reached touchdown without crossing the Poincaré section")]
    NoSectionCrossing,
    /// High-gain impulse realization did not settle within its time budget.
    #[error("high-gain impulse stage stalled (residual {residual:.3e} after {t:.6} s)")]
    HighGainStall { t: f64, residual: f64 },
    /// Swing foot started below the ground or dug in immediately.
    #[error("swing foot below ground at step start (clearance {clearance:.3e} m)")]
    FootBelowGround { clearance: f64 },
}

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model, gait, or run parameters; `path` names the offending field.
    #[error("invalid parameter {path}: {message}")]
    Validation { path: String, message: String },
    /// A walking step could not be completed.
    #[error("step failure: {0}")]
    Step(#[from] StepFailure),
    /// A numerical routine failed to converge or produced a non-finite value.
    #[error("numerical failure in {context}: {message}")]
    Numerical { context: String, message: String },
    /// Configuration file could not be parsed; `path` names the key.
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { path: path.into(), message: message.into() }
    }

    pub fn numerical(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numerical { context: context.into(), message: message.into() }
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { path: path.into(), message: message.into() }
    }
}
