//! Log-level validation: ordering and entity occupancy rules that a single
//! record cannot check on its own.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use crate::model::{EntityId, LogRecord, Timestamp, VertexId};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViolationKind {
    OutOfOrderTimestamp {
        previous: Timestamp,
        found: Timestamp,
    },
    /// A never-seen entity appears twice in the record that gives birth to it.
    DuplicateEntityBirth {
        entity: EntityId,
    },
    /// An existing entity appears twice in one record.
    DuplicateEntity {
        entity: EntityId,
    },
    EntityNotAtSource {
        entity: EntityId,
        vertex: VertexId,
    },
    EntityAlreadyAtDestination {
        entity: EntityId,
        vertex: VertexId,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    /// Zero-based position of the offending record in the log.
    pub position: usize,
    #[serde(flatten)]
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: ", self.position)?;
        match &self.kind {
            ViolationKind::OutOfOrderTimestamp { previous, found } => {
                write!(f, "out-of-order timestamp {found} after {previous}")
            }
            ViolationKind::DuplicateEntityBirth { entity } => {
                write!(f, "entity {entity} born twice")
            }
            ViolationKind::DuplicateEntity { entity } => {
                write!(f, "entity {entity} listed twice")
            }
            ViolationKind::EntityNotAtSource { entity, vertex } => {
                write!(
                    f,
                    "entity {entity} sent from {vertex}, which does not hold it"
                )
            }
            ViolationKind::EntityAlreadyAtDestination { entity, vertex } => {
                write!(
                    f,
                    "entity {entity} sent to {vertex}, which already holds it"
                )
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Incremental validator; feed records in log order.
///
/// Records that violate a rule are reported and otherwise ignored, so entity
/// locations keep reflecting the valid prefix.
#[derive(Debug, Default)]
pub struct LogValidator {
    position: usize,
    last_t: Option<Timestamp>,
    locations: HashMap<EntityId, HashSet<VertexId>>,
}

impl LogValidator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Checks one record and returns its violations (empty when valid).
    pub fn push(&mut self, record: &LogRecord) -> Vec<Violation> {
        let position = self.position;
        self.position += 1;
        let mut found = Vec::new();
        let t = record.t();
        if let Some(previous) = self.last_t {
            if t < previous {
                found.push(Violation {
                    position,
                    kind: ViolationKind::OutOfOrderTimestamp { previous, found: t },
                });
            }
        }
        if found.is_empty() {
            self.last_t = Some(t);
        }

        let LogRecord::Interaction(r) = record else {
            return found;
        };
        let Some(entities) = &r.entities else {
            return found;
        };
        let mut seen_here = HashSet::new();
        let mut entity_violations = Vec::new();
        for e in entities {
            let born_here = !self.locations.contains_key(e);
            if !seen_here.insert(e) {
                let kind = if born_here {
                    ViolationKind::DuplicateEntityBirth { entity: e.clone() }
                } else {
                    ViolationKind::DuplicateEntity { entity: e.clone() }
                };
                entity_violations.push(Violation { position, kind });
                continue;
            }
            let present = self.locations.get(e).is_some_and(|at| at.contains(&r.src));
            // Replication copies an existing entity; it cannot give birth to one.
            if !present && (!born_here || r.replicate) {
                entity_violations.push(Violation {
                    position,
                    kind: ViolationKind::EntityNotAtSource {
                        entity: e.clone(),
                        vertex: r.src.clone(),
                    },
                });
            }
            if self.locations.get(e).is_some_and(|at| at.contains(&r.dst)) {
                entity_violations.push(Violation {
                    position,
                    kind: ViolationKind::EntityAlreadyAtDestination {
                        entity: e.clone(),
                        vertex: r.dst.clone(),
                    },
                });
            }
        }
        if entity_violations.is_empty() && found.is_empty() {
            for e in entities {
                let at = self.locations.entry(e.clone()).or_default();
                if !r.replicate {
                    at.remove(&r.src);
                }
                at.insert(r.dst.clone());
            }
        }
        found.extend(entity_violations);
        found
    }
}

/// Validates a whole log. Equal timestamps are legal and keep log order.
pub fn validate_log<'a, I>(log: I) -> ValidationReport
where
    I: IntoIterator<Item = &'a LogRecord>,
{
    let mut validator = LogValidator::new();
    let violations = log.into_iter().flat_map(|r| validator.push(r)).collect();
    ValidationReport { violations }
}
