//! Error taxonomy shared across the crate.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, ShuttleError>;

#[derive(Debug, thiserror::Error)]
pub enum ShuttleError {
    /// An argument lies outside the domain an operation is defined on
    /// (position outside the working window, non-positive duration, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// An electrode cannot be biased to produce the requested well.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// A tabulated-potential fit failed (too few samples, ill-conditioned).
    #[error("fit error: {0}")]
    Fit(String),

    /// The electrode geometry cannot realise the requested force/curvature
    /// pair (the 2x2 inversion is singular along the path).
    #[error("degenerate electrode geometry: {0}")]
    DegenerateGeometry(String),

    /// The classical trajectory left the working window.
    #[error("ion escaped the working window at t = {t} us")]
    Escape { t: f64 },

    /// The iterative optimizer failed to descend.
    #[error("optimization diverged: {0}")]
    Divergence(String),

    /// The wavepacket grew too large for the moving grid.
    #[error("grid too small: {0}")]
    GridTooSmall(String),

    /// The propagator lost unitarity beyond tolerance.
    #[error("norm drift {drift:.3e} exceeds tolerance")]
    NormDrift { drift: f64 },

    /// The initial ramp's final-state overlap is too small to define a
    /// meaningful overlap-based optimization.
    #[error("guess too poor: {0}")]
    GuessTooPoor(String),

    /// A ratio diagnostic is undefined because its denominator vanishes.
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    /// No stability window exists at the requested center duration.
    #[error("no stability window: {0}")]
    NoWindow(String),

    /// Configuration file or flag problem.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ShuttleError {
    /// Process exit code for the command-line binary: 2 for configuration
    /// problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ShuttleError::Config(_) | ShuttleError::Io(_) | ShuttleError::Json(_) => 2,
            _ => 3,
        }
    }
}
