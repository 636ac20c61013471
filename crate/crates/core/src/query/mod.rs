//! The five temporal provenance queries.
//!
//! * Q1 backward: where the content of `v` at `t` came from, traced `depth` hops.
//! * Q2 forward: where quantity leaving `s` at or after `t` went.
//! * Q3 temporal lineage: last-hop arrivals into `v` within a closed window.
//! * Q4 flow lineage: how much quantity minted at `s` reached `d` through `via`.
//! * Q5 versioning: how the provenance of `v` changed between two instants.
//!
//! Liquid tracing recurses through the index: an entry `(u, t)` at `v` is
//! re-attributed through the outflow `u -> v` at `t`, which records the
//! sender entries it consumed and the part the sender minted. Discrete
//! queries walk entity paths instead.

mod entities;
mod trace;

use std::collections::BTreeMap;
use std::fmt;
use std::num::NonZeroU32;
use std::str::FromStr;

use serde_json::{json, Value};

use crate::error::QueryError;
use crate::index::{dec, Flank, ProvKey, ProvMap, ProvenanceEntry, TemporalProvenanceIndex};
use crate::model::{DataClass, Timestamp, VertexId};

pub use trace::Tracer;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// How many hops a recursive query may follow.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Depth {
    Limited(NonZeroU32),
    Unlimited,
}

impl Depth {
    pub fn limited(n: u32) -> Option<Self> {
        NonZeroU32::new(n).map(Depth::Limited)
    }

    pub(crate) fn budget(self) -> Option<u32> {
        match self {
            Depth::Limited(n) => Some(n.get()),
            Depth::Unlimited => None,
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Depth::Limited(n) => write!(f, "{n}"),
            Depth::Unlimited => f.write_str("inf"),
        }
    }
}

impl FromStr for Depth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinite" | "unlimited" | "∞" => Ok(Depth::Unlimited),
            n => n
                .parse::<u32>()
                .ok()
                .and_then(Depth::limited)
                .ok_or_else(|| format!("depth must be a positive integer or `inf`, got {s}")),
        }
    }
}

/// Closed time range `[start, end]`. Empty when `start > end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Horizon {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Horizon {
    pub fn new(start: Timestamp, end: Timestamp) -> Self {
        Self { start, end }
    }

    pub fn full() -> Self {
        Self::new(Timestamp::ZERO, Timestamp::MAX)
    }

    pub fn is_empty(&self) -> bool {
        self.start > self.end
    }
}

// ---------------------------------------------------------------------------
// Answers
// ---------------------------------------------------------------------------

/// One `(origin, time, quantity)` tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct AnswerEntry {
    pub origin: VertexId,
    pub t: Timestamp,
    pub q: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProvenanceAnswer {
    /// Sorted by origin then time; every `q > 0`.
    pub entries: Vec<AnswerEntry>,
    pub depth_reached: u32,
    /// True when some branch stopped at the depth limit or a cycle before
    /// reaching minted quantity.
    pub truncated: bool,
}

impl ProvenanceAnswer {
    pub(crate) fn from_terms(
        terms: BTreeMap<(VertexId, Timestamp), f64>,
        depth: u32,
        truncated: bool,
    ) -> Self {
        Self {
            entries: terms
                .into_iter()
                .filter(|(_, q)| *q > 0.0)
                .map(|((origin, t), q)| AnswerEntry { origin, t, q })
                .collect(),
            depth_reached: depth,
            truncated,
        }
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.q).sum()
    }

    /// Sum of the entries attributed to `origin`.
    pub fn total_from(&self, origin: &VertexId) -> f64 {
        self.entries
            .iter()
            .filter(|e| &e.origin == origin)
            .map(|e| e.q)
            .sum()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "entries": self.entries.iter().map(|e| json!({
                "origin": e.origin.as_str(),
                "t": e.t.value(),
                "q": dec(e.q),
            })).collect::<Vec<_>>(),
            "depth_reached": self.depth_reached,
            "truncated": self.truncated,
        })
    }
}

/// Source-originated quantity carried by one flow.
#[derive(Clone, Debug, PartialEq)]
pub struct Delivery {
    pub from: VertexId,
    pub to: VertexId,
    pub t: Timestamp,
    pub q_from_source: f64,
    /// Everything the flow carried.
    pub hop_total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardAnswer {
    pub source: VertexId,
    /// Sorted by time, then sender, then receiver.
    pub deliveries: Vec<Delivery>,
    /// Vertices receiving source quantity, in order of first delivery.
    pub reached: Vec<VertexId>,
}

impl ForwardAnswer {
    pub(crate) fn from_deliveries(source: VertexId, mut deliveries: Vec<Delivery>) -> Self {
        deliveries.sort_by(|a, b| (a.t, &a.from, &a.to).cmp(&(b.t, &b.from, &b.to)));
        let mut reached: Vec<VertexId> = Vec::new();
        for d in &deliveries {
            if !reached.contains(&d.to) {
                reached.push(d.to.clone());
            }
        }
        Self {
            source,
            deliveries,
            reached,
        }
    }

    /// Total source quantity delivered into `v`.
    pub fn delivered_to(&self, v: &VertexId) -> f64 {
        self.deliveries
            .iter()
            .filter(|d| &d.to == v)
            .map(|d| d.q_from_source)
            .sum()
    }

    pub fn to_json(&self) -> Value {
        json!({
            "source": self.source.as_str(),
            "deliveries": self.deliveries.iter().map(|d| json!({
                "from": d.from.as_str(),
                "to": d.to.as_str(),
                "t": d.t.value(),
                "q_from_source": dec(d.q_from_source),
                "hop_total": dec(d.hop_total),
            })).collect::<Vec<_>>(),
            "reached": self.reached.iter().map(|v| v.as_str()).collect::<Vec<_>>(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntryChange {
    pub origin: VertexId,
    pub birth_t: Timestamp,
    pub via_replication: bool,
    pub q_before: f64,
    pub q_after: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProvenanceDelta {
    pub added: Vec<ProvenanceEntry>,
    pub removed: Vec<ProvenanceEntry>,
    pub changed: Vec<EntryChange>,
    pub buffer_before: f64,
    pub buffer_after: f64,
}

impl ProvenanceDelta {
    pub fn between(
        before: &ProvMap,
        buffer_before: f64,
        after: &ProvMap,
        buffer_after: f64,
    ) -> Self {
        let mut delta = Self {
            buffer_before,
            buffer_after,
            ..Self::default()
        };
        for (k, &q) in before {
            match after.get(k) {
                None => delta.removed.push(ProvenanceEntry::from_pair(k, q)),
                Some(&q2) if q2 != q => delta.changed.push(EntryChange {
                    origin: k.origin.clone(),
                    birth_t: k.birth,
                    via_replication: k.via_replication,
                    q_before: q,
                    q_after: q2,
                }),
                Some(_) => {}
            }
        }
        for (k, &q) in after {
            if !before.contains_key(k) {
                delta.added.push(ProvenanceEntry::from_pair(k, q));
            }
        }
        delta
    }

    pub fn is_empty(&self) -> bool {
        self.added.is_empty()
            && self.removed.is_empty()
            && self.changed.is_empty()
            && self.buffer_before == self.buffer_after
    }

    pub fn to_json(&self) -> Value {
        let entry = |e: &ProvenanceEntry| {
            json!({
                "origin": e.origin.as_str(),
                "birth_t": e.birth_t.value(),
                "q": dec(e.q),
                "via_replication": e.via_replication,
            })
        };
        json!({
            "added": self.added.iter().map(entry).collect::<Vec<_>>(),
            "removed": self.removed.iter().map(entry).collect::<Vec<_>>(),
            "changed": self.changed.iter().map(|c| json!({
                "origin": c.origin.as_str(),
                "birth_t": c.birth_t.value(),
                "via_replication": c.via_replication,
                "q_before": dec(c.q_before),
                "q_after": dec(c.q_after),
            })).collect::<Vec<_>>(),
            "buffer_before": dec(self.buffer_before),
            "buffer_after": dec(self.buffer_after),
        })
    }
}

/// Applies a delta to the provenance it was computed from.
pub fn apply_delta(prov: &ProvMap, delta: &ProvenanceDelta) -> ProvMap {
    let mut out = prov.clone();
    for e in &delta.removed {
        out.remove(&e.key());
    }
    for c in &delta.changed {
        let key = ProvKey {
            origin: c.origin.clone(),
            birth: c.birth_t,
            via_replication: c.via_replication,
        };
        out.insert(key, c.q_after);
    }
    for e in &delta.added {
        out.insert(e.key(), e.q);
    }
    out
}

// ---------------------------------------------------------------------------
// Query entry points
// ---------------------------------------------------------------------------

/// Backward provenance of `v` at `t`. Empty for unknown vertices or instants
/// before the first state.
pub fn q1_backward(
    index: &TemporalProvenanceIndex,
    v: &VertexId,
    t: Timestamp,
    depth: Depth,
    flank: Flank,
) -> ProvenanceAnswer {
    Tracer::new(index).q1_backward(v, t, depth, flank)
}

/// Forward provenance of quantity leaving `s` at or after `t`.
pub fn q2_forward(
    index: &TemporalProvenanceIndex,
    s: &VertexId,
    t: Timestamp,
    depth: Depth,
) -> ForwardAnswer {
    Tracer::new(index).q2_forward(s, t, depth)
}

/// Last-hop arrivals into `v` within the closed window `[t1, t2]`.
pub fn q3_temporal_lineage(
    index: &TemporalProvenanceIndex,
    v: &VertexId,
    t1: Timestamp,
    t2: Timestamp,
) -> Result<ProvenanceAnswer, QueryError> {
    if t1 > t2 {
        return Err(QueryError::InvertedRange { t1, t2 });
    }
    let mut terms = BTreeMap::new();
    for (k, q) in index.inflows_within(v, t1, t2) {
        *terms.entry((k.peer, k.t)).or_insert(0.0) += q;
    }
    let depth = u32::from(!terms.is_empty());
    Ok(ProvenanceAnswer::from_terms(terms, depth, false))
}

/// Quantity minted at `s` that reached `d` having passed through `via`,
/// counting only flows within `horizon`.
pub fn q4_flow_lineage(
    index: &TemporalProvenanceIndex,
    s: &VertexId,
    d: &VertexId,
    via: &VertexId,
    horizon: Horizon,
) -> Result<f64, QueryError> {
    Tracer::new(index).q4_flow_lineage(s, d, via, horizon)
}

/// Provenance delta of `v` between the post-flank states at `t1` and `t2`.
pub fn q5_versioning(
    index: &TemporalProvenanceIndex,
    v: &VertexId,
    t1: Timestamp,
    t2: Timestamp,
) -> Result<ProvenanceDelta, QueryError> {
    if t1 >= t2 {
        return Err(QueryError::NonIncreasingTimes { t1, t2 });
    }
    let empty = ProvMap::new();
    let side = |t| {
        index
            .state_at(v, t, Flank::Post)
            .map_or((&empty, 0.0), |s| (&s.prov, s.buffer))
    };
    let (p1, b1) = side(t1);
    let (p2, b2) = side(t2);
    Ok(ProvenanceDelta::between(p1, b1, p2, b2))
}

// ---------------------------------------------------------------------------
// Uniform query values
// ---------------------------------------------------------------------------

/// Any of the five queries with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Query {
    Backward {
        v: VertexId,
        t: Timestamp,
        depth: Depth,
        flank: Flank,
    },
    Forward {
        s: VertexId,
        t: Timestamp,
        depth: Depth,
    },
    TemporalLineage {
        v: VertexId,
        t1: Timestamp,
        t2: Timestamp,
    },
    FlowLineage {
        s: VertexId,
        d: VertexId,
        via: VertexId,
        horizon: Horizon,
    },
    Versioning {
        v: VertexId,
        t1: Timestamp,
        t2: Timestamp,
    },
}

impl Query {
    pub fn kind(&self) -> &'static str {
        match self {
            Query::Backward { .. } => "q1",
            Query::Forward { .. } => "q2",
            Query::TemporalLineage { .. } => "q3",
            Query::FlowLineage { .. } => "q4",
            Query::Versioning { .. } => "q5",
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Backward { v, t, depth, flank } => {
                write!(f, "q1({v}, t={t}, depth={depth}, {flank:?})")
            }
            Query::Forward { s, t, depth } => write!(f, "q2({s}, t={t}, depth={depth})"),
            Query::TemporalLineage { v, t1, t2 } => write!(f, "q3({v}, [{t1}, {t2}])"),
            Query::FlowLineage { s, d, via, horizon } => write!(
                f,
                "q4({s} -> {d} via {via}, [{}, {}])",
                horizon.start, horizon.end
            ),
            Query::Versioning { v, t1, t2 } => write!(f, "q5({v}, {t1} -> {t2})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Answer {
    Provenance(ProvenanceAnswer),
    Forward(ForwardAnswer),
    Flow(f64),
    Delta(ProvenanceDelta),
    Rejected(QueryError),
}

impl Answer {
    pub fn to_json(&self) -> Value {
        match self {
            Answer::Provenance(a) => a.to_json(),
            Answer::Forward(a) => a.to_json(),
            Answer::Flow(q) => json!({ "q": dec(*q) }),
            Answer::Delta(d) => d.to_json(),
            Answer::Rejected(e) => json!({ "error": e.to_string() }),
        }
    }
}

impl<T, F: FnOnce(T) -> Answer> From<(Result<T, QueryError>, F)> for Answer {
    fn from((r, wrap): (Result<T, QueryError>, F)) -> Self {
        r.map_or_else(Answer::Rejected, wrap)
    }
}

impl TemporalProvenanceIndex {
    pub(crate) fn is_discrete(&self) -> bool {
        self.config().data_class == DataClass::Discrete
    }
}

impl<'a> Tracer<'a> {
    /// Runs any query, reusing this tracer's caches.
    pub fn run(&mut self, query: &Query) -> Answer {
        match query {
            Query::Backward { v, t, depth, flank } => {
                Answer::Provenance(self.q1_backward(v, *t, *depth, *flank))
            }
            Query::Forward { s, t, depth } => Answer::Forward(self.q2_forward(s, *t, *depth)),
            Query::TemporalLineage { v, t1, t2 } => (
                q3_temporal_lineage(self.index(), v, *t1, *t2),
                Answer::Provenance,
            )
                .into(),
            Query::FlowLineage { s, d, via, horizon } => {
                (self.q4_flow_lineage(s, d, via, *horizon), Answer::Flow).into()
            }
            Query::Versioning { v, t1, t2 } => {
                (q5_versioning(self.index(), v, *t1, *t2), Answer::Delta).into()
            }
        }
    }
}
