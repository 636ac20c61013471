use thiserror::Error;

use crate::model::{EntityId, Timestamp, VertexId};

/// A log record that could not be turned into a valid interaction.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("invalid field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("field `q`: quantity must be strictly positive, got {0}")]
    NonPositiveQuantity(f64),
    #[error("field `t`: timestamp must be finite and non-negative, got {0}")]
    NegativeTimestamp(f64),
    #[error("fields `src`/`dst`: reflexive interaction on vertex {0}")]
    SelfLoop(String),
    #[error("field `entities`: required in discrete mode")]
    MissingEntities,
    #[error("field `q`: discrete quantities must be integral, got {0}")]
    NonIntegerQuantity(f64),
    #[error("field `entities`: expected {expected} entities, found {found}")]
    EntityCountMismatch { expected: f64, found: usize },
    #[error("CSV input is only supported for liquid data")]
    CsvRequiresLiquid,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("time regression: {found} precedes last applied timestamp {last}")]
    TimeRegression { last: Timestamp, found: Timestamp },
    #[error("invalid interaction: {0}")]
    Invalid(#[from] ParseError),
    #[error("entity {entity} is not present at {vertex}")]
    EntityNotAtSource { entity: EntityId, vertex: VertexId },
    #[error("entity {0} listed more than once in one interaction")]
    DuplicateEntity(EntityId),
    #[error("entity {entity} is already present at {vertex}")]
    EntityAlreadyAt { entity: EntityId, vertex: VertexId },
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AttributionError {
    #[error(
        "attribution inputs must be non-negative and finite (buffer {buffer}, outflow {outflow})"
    )]
    NegativeInput { buffer: f64, outflow: f64 },
    #[error("outflow quantity must be positive, got {0}")]
    NonPositiveOutflow(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndexError {
    #[error("non-monotone insertion at {vertex}: new state starts at {new_start}, open state starts at {open_start}")]
    NonMonotone {
        vertex: VertexId,
        open_start: Timestamp,
        new_start: Timestamp,
    },
    #[error("state for {found} appended to timeline of {expected}")]
    WrongVertex { expected: VertexId, found: VertexId },
    #[error("empty range: {t1} > {t2}")]
    InvertedRange { t1: Timestamp, t2: Timestamp },
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("unsupported snapshot version {found} (expected {expected})")]
    Version { found: u64, expected: u64 },
    #[error("truncated snapshot: expected {expected} {what}, found {found}")]
    Truncated {
        what: &'static str,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QueryError {
    #[error("empty range: {t1} > {t2}")]
    InvertedRange { t1: Timestamp, t2: Timestamp },
    #[error("versioning requires t1 < t2 (got {t1} and {t2})")]
    NonIncreasingTimes { t1: Timestamp, t2: Timestamp },
    #[error("source, destination and intermediary must be distinct")]
    NonDistinctVertices,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("compression ratio undefined for zero states")]
pub struct ZeroStates;
