use thiserror::Error;

use crate::expr::ExprError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("matrix {matrix}, entry {index}: {source}")]
    Entry {
        matrix: String,
        index: usize,
        source: ExprError,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("Gram matrix is not positive semidefinite (min eigenvalue {min_eig:e}, max {max_eig:e})")]
    NotPsd { min_eig: f64, max_eig: f64 },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("system is not exponentially stable in the second moment")]
    Unstable,
    #[error("LMI infeasible: {0}")]
    Infeasible(String),
    #[error("moment series diverged after {terms} terms")]
    Divergence { terms: usize },
    #[error("partial sums decreased at term {term}")]
    NonMonotone { term: usize },
    #[error("non-finite or diverging state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable tag for result documents.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Expr(_) | Error::Entry { .. } => "expression",
            Error::Dimension(_) => "dimension",
            Error::Schema(_) | Error::Json(_) => "schema",
            Error::Distribution(_) => "distribution",
            Error::NotPsd { .. } => "moments",
            Error::Solver(_) => "solver",
            Error::Unstable => "unstable",
            Error::Infeasible(_) => "infeasible",
            Error::Divergence { .. } | Error::NonMonotone { .. } => "divergence",
            Error::NonFinite { .. } => "non-finite",
            Error::Io(_) => "io",
        }
    }

    /// Unstable/infeasible verdicts are valid answers rather than failures.
    pub fn is_verdict(&self) -> bool {
        matches!(self, Error::Unstable | Error::Infeasible(_) | Error::Divergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
