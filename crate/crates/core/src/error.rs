use thiserror::Error;

/// Every failure the library can report.
///
/// [`Error::code`] gives a stable machine-readable tag for each variant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("the map annihilates a state (its kernel meets the state space)")]
    KernelMeetsStates,

    #[error("degenerate chain: {0}")]
    DegenerateChain(String),

    #[error("boundary iteration did not converge: residual {residual:e} at depth {depth}")]
    NoConvergence { residual: f64, depth: usize },

    #[error("singular gauge at site {site}: smallest eigenvalue {eta:e}")]
    SingularGauge { site: i64, eta: f64 },

    #[error("regime {regime} cannot run on a {kind} ensemble")]
    RegimeMismatch { regime: String, kind: String },

    #[error("ensemble declares no mixing profile")]
    MissingProfile,

    #[error("window calibration failed: {0}")]
    CalibrationFailed(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::DimMismatch(_) => "dim_mismatch",
            Error::KernelMeetsStates => "kernel_meets_states",
            Error::DegenerateChain(_) => "degenerate_chain",
            Error::NoConvergence { .. } => "no_convergence",
            Error::SingularGauge { .. } => "singular_gauge",
            Error::RegimeMismatch { .. } => "regime_mismatch",
            Error::MissingProfile => "missing_profile",
            Error::CalibrationFailed(_) => "calibration_failed",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn mismatch(msg: impl Into<String>) -> Error {
    Error::DimMismatch(msg.into())
}
