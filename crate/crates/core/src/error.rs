use thiserror::Error;

/// Every failure the library can report. Variants marked as excision
/// triggers mean the frequency should be removed, not that the code is wrong.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("config error: {0}")]
    Config(String),
    #[error("eigenvalue with real part {real:.3e} exceeds tolerance {tol:.3e}")]
    EigenvalueRealPart { real: f64, tol: f64 },
    #[error("spectrum is not simple: imaginary parts {a} and {b} closer than {tol:.3e}")]
    NonSimpleSpectrum { a: f64, b: f64, tol: f64 },
    #[error("eigenbasis is singular or badly conditioned (cond {cond:.3e})")]
    SingularEigenbasis { cond: f64 },
    #[error("reality violation: imaginary residue {residue:.3e}")]
    RealityViolation { residue: f64 },
    #[error("support radius {radius} exceeds degree cap {cap}")]
    DegreeOverflow { radius: i32, cap: i32 },
    #[error("index out of assembled range: {0}")]
    OutOfRange(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("Neumann contraction factor {factor:.3e} is not below 1/4")]
    NotDiagonallyDominant { factor: f64 },
    #[error("Neumann series did not converge (tail {tail:.3e})")]
    NoConvergence { tail: f64 },
    #[error("Schur pivot |h| = {h:.3e} below threshold {threshold:.3e}")]
    SchurPivotTiny { h: f64, threshold: f64 },
    #[error("covering gap at k = {0:?}")]
    CoveringGap(Vec<i32>),
    #[error("pasted inverse failed certification: {0}")]
    BoundBlown(String),
    #[error("singular cluster too wide: {width} > {limit}")]
    ClusterTooWide { width: i32, limit: i32 },
    #[error("{count} singular sites in one block")]
    MultipleSingularSites { count: usize },
    #[error("matrix is singular")]
    SingularMatrix,
    #[error("polynomial fit ill-conditioned: {0}")]
    FitIllConditioned(String),
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("perturbation too large for Neumann refresh ({factor:.3e} >= 1/2)")]
    PerturbationTooLarge { factor: f64 },
    #[error("frequency excised: {0}")]
    Excised(String),
    #[error("divergence detected: {0}")]
    Divergence(String),
    #[error("history too short: {len} usable entries, need 4")]
    TooShortHistory { len: usize },
    #[error("io error: {0}")]
    Io(String),
}

impl QpError {
    /// True for failures that signal a bad frequency rather than a bad input.
    pub fn is_excision_trigger(&self) -> bool {
        matches!(
            self,
            QpError::SchurPivotTiny { .. }
                | QpError::BoundBlown(_)
                | QpError::ClusterTooWide { .. }
                | QpError::MultipleSingularSites { .. }
                | QpError::NotDiagonallyDominant { .. }
                | QpError::NoConvergence { .. }
                | QpError::SingularMatrix
                | QpError::CoveringGap(_)
                | QpError::Excised(_)
        )
    }
}

impl From<std::io::Error> for QpError {
    fn from(e: std::io::Error) -> Self {
        QpError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, QpError>;
