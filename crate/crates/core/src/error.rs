use thiserror::Error;

use crate::ir::Diagnostic;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },

    #[error("line {line}: {diag}")]
    IllFormed { line: usize, diag: Diagnostic },

    #[error("ill-formed program: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Diagnostics(Vec<Diagnostic>),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("malformed substitution: {0}")]
    Substitution(String),

    #[error("inference order: no structure known for `{0}`")]
    InferenceOrder(String),

    #[error("structure side condition violated: {0}")]
    SideCondition(String),

    #[error("variable `{var}` is unbounded in rule for `{rule}`")]
    Unbounded { var: String, rule: String },

    #[error("missing input tensor `{0}`")]
    MissingInput(String),

    #[error("dimension mismatch for `{tensor}`: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        tensor: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("size `{0}` is not bound")]
    UnboundSize(String),

    #[error("tensor file: {0}")]
    TensorFile(String),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
