//! Trace schema: definitions, workloads, solutions, evaluations and their bundle.

mod bind;
pub mod constraint;
mod dataset;
mod parse;
mod types;

use thiserror::Error;

pub use bind::{bind_workload, AxisSource, BindError, BoundShapes};
pub use constraint::{eval_constraint, ConstraintEvalError, ConstraintExpr, ConstraintParseError, TensorLookup};
pub use dataset::{dedup_workloads, Dataset, StoredTrace, Violation};
pub use parse::{
    check_workload_against, parse_definition, parse_document, parse_solution, parse_trace, serialize_definition,
    serialize_solution, serialize_trace, to_canonical_string, Document,
};
pub use types::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("schema error at `{path}`: {reason}")]
    Schema { path: String, reason: String },
    #[error("bad constraint at `{path}`: {source}")]
    ConstraintGrammar {
        path: String,
        #[source]
        source: ConstraintParseError,
    },
}
