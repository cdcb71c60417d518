use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DpdError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("singular design: numerical rank {rank} < {p} columns")]
    SingularDesign { rank: usize, p: usize },
    #[error("singular matrix {what} (condition number {cond:.3e})")]
    Singular { what: String, cond: f64 },
    #[error("optimizer failed: {0}")]
    NonConvergence(String),
    #[error("series truncation failed: residual {residual:.3e} after {terms} terms")]
    Series { residual: f64, terms: usize },
    #[error("discrete support truncation failed: {0}")]
    Truncation(String),
    #[error("degenerate alternative: {0}")]
    DegenerateAlternative(String),
    #[error("target power {target} not reached for any n <= {cap}")]
    UnreachablePower { target: f64, cap: usize },
}

impl DpdError {
    /// True for errors caused by malformed input rather than numerical trouble.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            DpdError::Domain(_) | DpdError::Invalid(_) | DpdError::SingularDesign { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, DpdError>;
