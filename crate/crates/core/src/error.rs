//! Execution errors and the crate-level error type.

use std::fmt;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::expr::{BuildError, NodeId};
use crate::jagged::JaggedError;
use crate::schema::{SchemaError, TypeError};

/// Coarse error classes. Different backends and the oracle report the same
/// category for the same failing program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorCategory {
    Build,
    Type,
    Plan,
    Query,
    EmptySequence,
    ShapeMismatch,
    KindMismatch,
    Data,
    Io,
    Internal,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 10] = [
        ErrorCategory::Build,
        ErrorCategory::Type,
        ErrorCategory::Plan,
        ErrorCategory::Query,
        ErrorCategory::EmptySequence,
        ErrorCategory::ShapeMismatch,
        ErrorCategory::KindMismatch,
        ErrorCategory::Data,
        ErrorCategory::Io,
        ErrorCategory::Internal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::Build => "build",
            ErrorCategory::Type => "type",
            ErrorCategory::Plan => "plan",
            ErrorCategory::Query => "query",
            ErrorCategory::EmptySequence => "empty-sequence",
            ErrorCategory::ShapeMismatch => "shape-mismatch",
            ErrorCategory::KindMismatch => "kind-mismatch",
            ErrorCategory::Data => "data",
            ErrorCategory::Io => "io",
            ErrorCategory::Internal => "internal",
        }
    }

    pub fn from_name(name: &str) -> Option<ErrorCategory> {
        ErrorCategory::ALL.into_iter().find(|c| c.name() == name)
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<&JaggedError> for ErrorCategory {
    fn from(e: &JaggedError) -> Self {
        match e {
            JaggedError::EmptySequence { .. } => ErrorCategory::EmptySequence,
            JaggedError::ShapeMismatch { .. } => ErrorCategory::ShapeMismatch,
            JaggedError::KindMismatch { .. } => ErrorCategory::KindMismatch,
            JaggedError::InvalidOffsets(_) | JaggedError::DepthTooSmall { .. } => ErrorCategory::Internal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("{node}: {source}")]
    Kernel { node: NodeId, source: JaggedError },
    #[error("{node}: collection `{collection}` is not in the data")]
    MissingCollection { node: NodeId, collection: String },
    #[error("{node}: column `{collection}.{leaf}` is not in the data")]
    MissingColumn { node: NodeId, collection: String, leaf: String },
    #[error("{node}: function `{name}` is not implemented here")]
    MissingFunction { node: NodeId, name: String },
    #[error("{node}: {msg}")]
    Unsupported { node: NodeId, msg: String },
    #[error("this backend cannot read dataset `{0}`")]
    NoDataAccess(String),
    #[error("remote service ({category}): {message}")]
    Remote { category: ErrorCategory, message: String },
    #[error("step {step} (nodes {nodes}): {source}")]
    Step { step: usize, nodes: String, source: Box<ExecError> },
}

impl ExecError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            ExecError::Kernel { source, .. } => source.into(),
            ExecError::MissingCollection { .. } | ExecError::MissingColumn { .. } => ErrorCategory::Data,
            ExecError::MissingFunction { .. } | ExecError::NoDataAccess(_) => ErrorCategory::Plan,
            ExecError::Unsupported { .. } => ErrorCategory::Internal,
            ExecError::Remote { category, .. } => *category,
            ExecError::Step { source, .. } => source.category(),
        }
    }
}

/// Any failure between recording an expression and materializing it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("build error: {0}")]
    Build(#[from] BuildError),
    #[error("schema error: {0}")]
    Schema(#[from] SchemaError),
    #[error("type error: {0}")]
    Type(#[from] TypeError),
    #[error("plan error: {0}")]
    Plan(#[from] crate::planner::PlanError),
    #[error("query error: {0}")]
    Query(#[from] crate::remote::QueryError),
    #[error("execution error: {0}")]
    Exec(#[from] ExecError),
    #[error("dataset error: {0}")]
    Dataset(#[from] DatasetError),
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Build(_) => ErrorCategory::Build,
            Error::Schema(_) | Error::Type(_) => ErrorCategory::Type,
            Error::Plan(_) => ErrorCategory::Plan,
            Error::Query(_) => ErrorCategory::Query,
            Error::Exec(e) => e.category(),
            Error::Dataset(_) => ErrorCategory::Data,
            Error::Io { .. } => ErrorCategory::Io,
        }
    }
}
