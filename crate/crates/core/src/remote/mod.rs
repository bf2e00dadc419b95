//! The remote query service and its client.
//!
//! Closed subexpressions that the planner assigns to the remote backend are
//! translated into query text ([`query`], [`translate`]), submitted to a
//! [`service::QueryService`] that evaluates them next to the data, and
//! shipped back in a compact binary format ([`wire`]). Results are cached on
//! disk by a hash of dataset and query text ([`cache`]).

pub mod cache;
pub mod query;
pub mod service;
pub mod translate;
pub mod wire;

use thiserror::Error;

use crate::expr::{BuildError, NodeId};

pub use query::{parse_query, QExpr};
pub use service::{QueryService, RemoteExecutor, RemoteResult};
pub use translate::{query_to_graph, translate, TranslateOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("{node} cannot be expressed as a query: {reason}")]
    Untranslatable { node: NodeId, reason: String },
    #[error("query does not build: {0}")]
    Build(#[from] BuildError),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("malformed result: {0}")]
    Wire(String),
}
