use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric positive definite: eigenvalue {eigenvalue:e} below floor {floor:e}")]
    NotPositiveDefinite { eigenvalue: f64, floor: f64 },

    /// A manifold operation left its domain (incomplete geodesic, non-invertible scaling, ...).
    #[error("{context}: out of domain, offending eigenvalue {eigenvalue:e}")]
    OutOfDomain { context: String, eigenvalue: f64 },

    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: String, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numerical {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn out_of_domain(context: impl Into<String>, eigenvalue: f64) -> Self {
        Error::OutOfDomain {
            context: context.into(),
            eigenvalue,
        }
    }

    /// Prefix the context of domain and numerical errors, leaving other variants untouched.
    pub fn with_context(self, prefix: &str) -> Self {
        match self {
            Error::OutOfDomain {
                context,
                eigenvalue,
            } => Error::OutOfDomain {
                context: format!("{prefix}: {context}"),
                eigenvalue,
            },
            Error::Numerical { context, detail } => Error::Numerical {
                context: format!("{prefix}: {context}"),
                detail,
            },
            Error::NotPositiveDefinite { eigenvalue, .. } => Error::OutOfDomain {
                context: format!("{prefix}: result not positive definite"),
                eigenvalue,
            },
            other => other,
        }
    }

    /// True for the numerical/domain family (CLI exit code 3).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::OutOfDomain { .. }
                | Error::Numerical { .. }
                | Error::Optimizer(_)
                | Error::Divergence { .. }
                | Error::Precondition(_)
        )
    }
}
