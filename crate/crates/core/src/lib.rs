//! Declarative analysis of jagged event data.
//!
//! User code records expressions into an immutable DAG ([`expr`]), which is
//! canonicalized, type-checked against a dataset schema ([`schema`]),
//! partitioned across a remote query service and a local array interpreter
//! ([`planner`], [`remote`], [`local`]) and materialized as
//! [`jagged::JaggedArray`] columns.

pub mod dataset;
pub mod error;
pub mod expr;
pub mod generate;
pub mod hist;
pub mod jagged;
pub mod local;
pub mod ops;
pub mod oracle;
pub mod planner;
pub mod remote;
pub mod schema;
pub mod session;

pub use error::{Error, ErrorCategory, ExecError};
