use thiserror::Error;

/// Crate-wide error type.
///
/// Numerical failures carry enough context to emit a machine-readable
/// error record from the CLI (kind, message, and a suggested fix where
/// one can be computed).
#[derive(Debug, Error)]
pub enum Error {
    /// An iterative scalar or vector solve failed to reach its residual
    /// target. Usually signals a non-monotone user-supplied gradient or a
    /// value outside the numerically reachable range of the map.
    #[error("{op}: no convergence after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        op: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A linear solve (conjugate gradient) stagnated above its residual
    /// target. Should not occur for the SPD systems assembled here.
    #[error("linear solve failed: residual {residual:.3e} exceeds target {target:.3e}")]
    LinearSolveFailure { residual: f64, target: f64 },

    /// The explicit-drift step was asked to run with a time step above the
    /// stability bound; the solver refuses rather than produce garbage.
    #[error("stability violation: tau {tau:.3e} exceeds bound {bound:.3e} (suggested tau {suggested_tau:.3e})")]
    StabilityViolation {
        tau: f64,
        bound: f64,
        suggested_tau: f64,
    },

    /// The Picard sweep distance failed to decrease for three consecutive
    /// sweeps, or the sweep budget ran out before reaching tolerance.
    #[error("picard iteration diverged after {sweeps} sweeps (last distance {distance:.3e}); try doubling alpha (currently {alpha:.3e})")]
    PicardDivergence {
        sweeps: usize,
        distance: f64,
        alpha: f64,
    },

    /// A diagnostic was asked for a path recorded without its drift flux.
    #[error("solution path has no recorded drift flux")]
    MissingFlux,

    /// Configuration rejected during validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable kind tag, used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonConvergence { .. } => "non_convergence",
            Error::LinearSolveFailure { .. } => "linear_solve_failure",
            Error::StabilityViolation { .. } => "stability_violation",
            Error::PicardDivergence { .. } => "picard_divergence",
            Error::MissingFlux => "missing_flux",
            Error::Config(_) => "validation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Exit code contract: 2 for validation problems, 3 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::Io(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
