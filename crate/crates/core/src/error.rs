use thiserror::Error;

use crate::model::Basis;

pub type Result<T> = std::result::Result<T, DrmError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DrmError {
    #[error("sample `{sample}` has non-positive value {value} at index {index}")]
    NonPositiveValue {
        sample: String,
        index: usize,
        value: f64,
    },

    #[error("sample `{sample}` is empty")]
    EmptySample { sample: String },

    #[error("tilt basis `{basis}` appears more than once")]
    DuplicateBasis { basis: Basis },

    #[error("unknown tilt basis element `{0}` (expected x, logx or log2x)")]
    UnknownBasis(String),

    #[error("got {tilts} tilt specifications for {neighbors} neighbor samples")]
    ArityMismatch { neighbors: usize, tilts: usize },

    #[error("parameter vector has length {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("Newton iteration did not converge after {iterations} iterations (score norm {score_norm:.3e})")]
    NoConvergence { iterations: usize, score_norm: f64 },

    #[error("singular Hessian: {0}")]
    SingularHessian(String),

    #[error("matrix is singular or ill-conditioned (smallest eigenvalue {min_eigenvalue:.3e}, condition {condition:.3e})")]
    Singular { min_eigenvalue: f64, condition: f64 },

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("neighbor `{label}`: {source}")]
    Neighbor {
        label: String,
        #[source]
        source: Box<DrmError>,
    },

    #[error("{failed} of {total} replicates failed, above the {max_rate} abort threshold")]
    TooManyFailures {
        failed: usize,
        total: usize,
        max_rate: f64,
    },
}

impl DrmError {
    /// True for errors raised by the numerical machinery rather than by input validation.
    pub fn is_numerical(&self) -> bool {
        match self {
            DrmError::NonFinite(_)
            | DrmError::NoConvergence { .. }
            | DrmError::SingularHessian(_)
            | DrmError::Singular { .. }
            | DrmError::TooManyFailures { .. } => true,
            DrmError::Neighbor { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
