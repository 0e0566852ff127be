//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong in validation, analysis, or fitting.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter that must be strictly positive was zero or negative.
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    /// A parameter was NaN or infinite.
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },

    /// A calculation needs the cavity mode volume but none was supplied.
    #[error("mode volume is required for {operation}")]
    MissingModeVolume { operation: &'static str },

    /// An axis or data vector was empty.
    #[error("{name} must not be empty")]
    EmptyAxis { name: &'static str },

    /// An axis that must be strictly increasing was not.
    #[error("{name} must be strictly increasing (violated at index {index})")]
    NonMonotonicAxis { name: &'static str, index: usize },

    /// The requested scan window cannot contain the features being counted.
    #[error("scan window {window:e} rad/s is narrower than {required:e} rad/s")]
    WindowTooNarrow { window: f64, required: f64 },

    /// The requested scan resolution cannot resolve the narrowest feature.
    #[error("scan resolution {resolution:e} rad/s is coarser than {required:e} rad/s")]
    ResolutionTooCoarse { resolution: f64, required: f64 },

    /// A bracketing scan found no single-to-double transition.
    #[error("no splitting transition inside [{g_lo:e}, {g_hi:e}] rad/s: {detail}")]
    NoTransition { g_lo: f64, g_hi: f64, detail: String },

    /// Fewer data points than the operation can work with.
    #[error("{operation} needs at least {required} points, got {actual}")]
    TooFewPoints {
        operation: &'static str,
        required: usize,
        actual: usize,
    },

    /// Dip tracking could not resolve the expected branch count.
    #[error("dip branches unresolved in {unresolved} of {total} rows")]
    BranchesUnresolved { unresolved: usize, total: usize },

    /// An operation that works on raw power received logarithmic data.
    #[error("{operation} requires linear-scale power data")]
    NotLinearScale { operation: &'static str },

    /// The normal equations could not be factorized even with damping.
    #[error("normal equations singular (condition ~{condition:e}); parameters: {params}")]
    SingularNormalEquations { condition: f64, params: String },

    /// The model produced NaN or infinity at the starting point.
    #[error("model returned a non-finite residual at the initial parameters")]
    NonFiniteModel,

    /// A fit seed violates the model's domain.
    #[error("bad initial guess for {name}: {detail}")]
    BadInitialGuess { name: &'static str, detail: String },

    /// Two slices that must have equal length did not.
    #[error("{left_name} has {left} elements but {right_name} has {right}")]
    LengthMismatch {
        left_name: &'static str,
        left: usize,
        right_name: &'static str,
        right: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
