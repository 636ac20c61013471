//! Temporal provenance index.
//!
//! Every vertex owns a chronologically ordered sequence of [`VertexState`]s
//! held in a B-tree keyed by the state's start time. States are half-open
//! intervals `[t_start, t_end)`; the last one is open-ended. A point lookup is
//! a predecessor search on the key, so `state_at` costs `O(log states)`.
//!
//! Besides the buffer and provenance visible during its interval, each state
//! keeps the flows applied while it was open: inflows (for arrival-window
//! queries) and outflows with the provenance they consumed (for recursive
//! tracing). Under [`BoundaryPolicy::PerInteraction`] several states may
//! start at the same instant; the zero-length ones are invisible to point
//! lookups but still carry their flow records.
//!
//! [`BoundaryPolicy::PerInteraction`]: crate::model::BoundaryPolicy::PerInteraction

mod snapshot;

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::IndexError;
use crate::model::{EntityId, Timestamp, TinConfig, VertexId};

pub(crate) use snapshot::dec;
pub use snapshot::SNAPSHOT_VERSION;

// ---------------------------------------------------------------------------
// Provenance entries
// ---------------------------------------------------------------------------

/// Identity of a provenance entry. Entries with equal keys merge by summing.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProvKey {
    /// The vertex that handed this quantity over (or minted it).
    pub origin: VertexId,
    /// When it arrived, or when it was minted.
    pub birth: Timestamp,
    pub via_replication: bool,
}

impl ProvKey {
    pub fn new(origin: impl Into<VertexId>, birth: Timestamp) -> Self {
        Self {
            origin: origin.into(),
            birth,
            via_replication: false,
        }
    }
}

pub type ProvMap = BTreeMap<ProvKey, f64>;

/// `(origin, birth time, quantity)` annotation on part of a buffer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProvenanceEntry {
    pub origin: VertexId,
    pub birth_t: Timestamp,
    pub q: f64,
    pub via_replication: bool,
}

impl ProvenanceEntry {
    pub fn new(origin: impl Into<VertexId>, birth_t: Timestamp, q: f64) -> Self {
        Self {
            origin: origin.into(),
            birth_t,
            q,
            via_replication: false,
        }
    }

    pub fn key(&self) -> ProvKey {
        ProvKey {
            origin: self.origin.clone(),
            birth: self.birth_t,
            via_replication: self.via_replication,
        }
    }

    pub fn from_pair(key: &ProvKey, q: f64) -> Self {
        Self {
            origin: key.origin.clone(),
            birth_t: key.birth,
            q,
            via_replication: key.via_replication,
        }
    }
}

pub fn prov_entries(map: &ProvMap) -> Vec<ProvenanceEntry> {
    map.iter()
        .map(|(k, &q)| ProvenanceEntry::from_pair(k, q))
        .collect()
}

pub fn prov_map<I: IntoIterator<Item = ProvenanceEntry>>(entries: I) -> ProvMap {
    let mut map = ProvMap::new();
    for e in entries {
        *map.entry(e.key()).or_insert(0.0) += e.q;
    }
    map
}

// ---------------------------------------------------------------------------
// Flow records
// ---------------------------------------------------------------------------

/// Aggregation key of the flows a state records: the other endpoint, the
/// instant, and whether the flow was a copy.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub peer: VertexId,
    pub t: Timestamp,
    pub replicated: bool,
}

/// Everything a vertex sent to one peer at one instant, with what it carried.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outflow {
    pub q: f64,
    /// Portion created at the sender to cover a deficit.
    pub minted: f64,
    /// The sender's provenance entries this flow drew from.
    pub consumed: ProvMap,
}

impl Outflow {
    pub(crate) fn absorb(&mut self, other: &Outflow) {
        self.q += other.q;
        self.minted += other.minted;
        for (k, q) in &other.consumed {
            *self.consumed.entry(k.clone()).or_insert(0.0) += q;
        }
    }
}

// ---------------------------------------------------------------------------
// States
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    /// No interaction has touched the vertex in this state.
    #[default]
    Idle,
    Accumulating,
    Depleting,
}

impl PhaseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseKind::Idle => "idle",
            PhaseKind::Accumulating => "accumulating",
            PhaseKind::Depleting => "depleting",
        }
    }

    pub(crate) fn parse(s: &str) -> Option<Self> {
        match s {
            "idle" => Some(PhaseKind::Idle),
            "accumulating" => Some(PhaseKind::Accumulating),
            "depleting" => Some(PhaseKind::Depleting),
            _ => None,
        }
    }
}

/// A vertex's regime together with the origins currently in its buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Phase {
    pub kind: PhaseKind,
    pub origin_set: BTreeSet<VertexId>,
}

/// A half-open interval during which a vertex's buffer and provenance are constant.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexState {
    pub vertex: VertexId,
    pub t_start: Timestamp,
    /// `None` while the state is open.
    pub t_end: Option<Timestamp>,
    pub buffer: f64,
    pub prov: ProvMap,
    /// Discrete mode only.
    pub entities: BTreeSet<EntityId>,
    pub phase: PhaseKind,
    pub inflows: BTreeMap<FlowKey, f64>,
    pub outflows: BTreeMap<FlowKey, Outflow>,
    pub epochs: Vec<String>,
    /// Cumulative quantity dropped as sub-tolerance dust at this vertex.
    pub dust: f64,
}

impl VertexState {
    /// An empty, untouched state.
    pub fn idle(vertex: VertexId, t_start: Timestamp) -> Self {
        Self {
            vertex,
            t_start,
            t_end: None,
            buffer: 0.0,
            prov: ProvMap::new(),
            entities: BTreeSet::new(),
            phase: PhaseKind::Idle,
            inflows: BTreeMap::new(),
            outflows: BTreeMap::new(),
            epochs: Vec::new(),
            dust: 0.0,
        }
    }

    /// A fresh open state at `t_start` carrying this state's content.
    pub fn successor(&self, t_start: Timestamp) -> Self {
        Self {
            vertex: self.vertex.clone(),
            t_start,
            t_end: None,
            buffer: self.buffer,
            prov: self.prov.clone(),
            entities: self.entities.clone(),
            phase: PhaseKind::Idle,
            inflows: BTreeMap::new(),
            outflows: BTreeMap::new(),
            epochs: Vec::new(),
            dust: self.dust,
        }
    }

    pub fn is_open(&self) -> bool {
        self.t_end.is_none()
    }

    /// Half-open containment.
    pub fn covers(&self, t: Timestamp) -> bool {
        self.t_start <= t && self.t_end.is_none_or(|end| t < end)
    }

    pub fn prov_entries(&self) -> Vec<ProvenanceEntry> {
        prov_entries(&self.prov)
    }

    pub fn prov_total(&self) -> f64 {
        self.prov.values().sum()
    }

    pub fn origin_set(&self) -> BTreeSet<VertexId> {
        self.prov.keys().map(|k| k.origin.clone()).collect()
    }

    pub fn phase(&self) -> Phase {
        Phase {
            kind: self.phase,
            origin_set: self.origin_set(),
        }
    }

    /// True when buffer, provenance and entities are all equal.
    pub fn same_content(&self, other: &VertexState) -> bool {
        self.buffer == other.buffer && self.prov == other.prov && self.entities == other.entities
    }
}

/// Which side of a boundary a point lookup returns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Flank {
    /// The state in force from `t` on (interactions at `t` are visible).
    #[default]
    Post,
    /// The state in force just before any boundary at exactly `t`.
    Pre,
}

impl std::str::FromStr for Flank {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "post" => Ok(Flank::Post),
            "pre" => Ok(Flank::Pre),
            _ => Err(format!("unknown flank: {s}")),
        }
    }
}

// ---------------------------------------------------------------------------
// Entity paths (discrete mode)
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hop {
    pub from: VertexId,
    pub to: VertexId,
    pub t: Timestamp,
    pub seq: u64,
    pub replicated: bool,
}

/// Where an entity was born and every hop it took, in log order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntityPath {
    pub birth_vertex: VertexId,
    pub birth_t: Timestamp,
    pub hops: Vec<Hop>,
}

impl EntityPath {
    /// The hop that most recently delivered the entity into `v`, among hops
    /// visible at `t` on the given flank.
    pub fn arrival_into(&self, v: &VertexId, t: Timestamp, flank: Flank) -> Option<usize> {
        self.hops.iter().rposition(|h| {
            &h.to == v
                && match flank {
                    Flank::Post => h.t <= t,
                    Flank::Pre => h.t < t,
                }
        })
    }

    /// The hop that brought the entity to the sender of hop `i`, if any.
    pub fn predecessor(&self, i: usize) -> Option<usize> {
        let from = &self.hops[i].from;
        self.hops[..i].iter().rposition(|h| &h.to == from)
    }
}

// ---------------------------------------------------------------------------
// The index
// ---------------------------------------------------------------------------

/// B-tree key of a state. `ordinal` separates states that start at the same
/// instant (zero-length states under per-interaction boundaries).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateKey {
    pub t_start: Timestamp,
    pub ordinal: u32,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VertexTimeline {
    states: BTreeMap<StateKey, VertexState>,
    /// Interactions that touched this vertex.
    interactions: u64,
}

impl VertexTimeline {
    pub fn states(&self) -> impl DoubleEndedIterator<Item = &VertexState> + '_ {
        self.states.values()
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn interactions(&self) -> u64 {
        self.interactions
    }

    pub fn open_state(&self) -> Option<&VertexState> {
        self.states.values().next_back()
    }

    fn open_key(&self) -> Option<StateKey> {
        self.states.keys().next_back().copied()
    }

    fn state_at(&self, t: Timestamp, flank: Flank) -> Option<&VertexState> {
        match flank {
            Flank::Post => self
                .states
                .range(
                    ..=StateKey {
                        t_start: t,
                        ordinal: u32::MAX,
                    },
                )
                .next_back(),
            Flank::Pre => self
                .states
                .range(
                    ..StateKey {
                        t_start: t,
                        ordinal: 0,
                    },
                )
                .next_back(),
        }
        .map(|(_, s)| s)
    }

    /// States whose closed interval `[t_start, t_end]` meets `[t1, t2]`, in
    /// time order. Includes zero-length states.
    fn states_touching(&self, t1: Timestamp, t2: Timestamp) -> Vec<&VertexState> {
        let mut out: Vec<_> = self
            .states
            .range(
                ..=StateKey {
                    t_start: t2,
                    ordinal: u32::MAX,
                },
            )
            .rev()
            .map(|(_, s)| s)
            .take_while(|s| s.t_end.is_none_or(|end| end >= t1))
            .collect();
        out.reverse();
        out
    }
}

/// Per-vertex chronologically ordered state sequences with ordered-map lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalProvenanceIndex {
    config: TinConfig,
    timelines: BTreeMap<VertexId, VertexTimeline>,
    entity_paths: BTreeMap<EntityId, EntityPath>,
    raw_interactions: u64,
    /// Timestamp of the first applied record; every timeline starts here.
    origin: Option<Timestamp>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VertexStats {
    pub vertex: VertexId,
    pub interactions: u64,
    pub states: usize,
    /// `None` when the vertex has no states.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IndexStats {
    pub raw_interactions: u64,
    pub states: usize,
    pub ratio: Option<f64>,
    pub vertices: Vec<VertexStats>,
}

impl TemporalProvenanceIndex {
    pub fn new(config: TinConfig) -> Self {
        Self {
            config,
            timelines: BTreeMap::new(),
            entity_paths: BTreeMap::new(),
            raw_interactions: 0,
            origin: None,
        }
    }

    pub fn config(&self) -> &TinConfig {
        &self.config
    }

    pub fn origin(&self) -> Option<Timestamp> {
        self.origin
    }

    pub fn vertices(&self) -> impl Iterator<Item = &VertexId> + '_ {
        self.timelines.keys()
    }

    pub fn contains_vertex(&self, v: &VertexId) -> bool {
        self.timelines.contains_key(v)
    }

    pub fn timeline(&self, v: &VertexId) -> Option<&VertexTimeline> {
        self.timelines.get(v)
    }

    pub fn states(&self, v: &VertexId) -> impl DoubleEndedIterator<Item = &VertexState> + '_ {
        self.timelines.get(v).into_iter().flat_map(|tl| tl.states())
    }

    pub fn raw_interaction_count(&self) -> u64 {
        self.raw_interactions
    }

    pub fn state_count(&self, v: &VertexId) -> usize {
        self.timelines.get(v).map_or(0, VertexTimeline::state_count)
    }

    pub fn total_state_count(&self) -> usize {
        self.timelines
            .values()
            .map(VertexTimeline::state_count)
            .sum()
    }

    pub fn entity_path(&self, e: &EntityId) -> Option<&EntityPath> {
        self.entity_paths.get(e)
    }

    pub fn entity_paths(&self) -> impl Iterator<Item = (&EntityId, &EntityPath)> + '_ {
        self.entity_paths.iter()
    }

    /// Point lookup. `None` before the vertex's first state or for unknown vertices.
    pub fn state_at(&self, v: &VertexId, t: Timestamp, flank: Flank) -> Option<&VertexState> {
        self.timelines.get(v)?.state_at(t, flank)
    }

    /// States whose interval intersects the closed range `[t1, t2]`, in time order.
    pub fn states_in(
        &self,
        v: &VertexId,
        t1: Timestamp,
        t2: Timestamp,
    ) -> Result<Vec<&VertexState>, IndexError> {
        if t1 > t2 {
            return Err(IndexError::InvertedRange { t1, t2 });
        }
        let Some(tl) = self.timelines.get(v) else {
            return Ok(Vec::new());
        };
        Ok(tl
            .states_touching(t1, t2)
            .into_iter()
            .filter(|s| s.t_end.is_none_or(|end| end > t1 && end > s.t_start))
            .collect())
    }

    /// Like [`Self::states_in`] but closed on both state ends, so it also
    /// returns zero-length states and states ending exactly at `t1`. Use this
    /// to collect flow records at given instants.
    pub fn states_touching(&self, v: &VertexId, t1: Timestamp, t2: Timestamp) -> Vec<&VertexState> {
        self.timelines
            .get(v)
            .map(|tl| tl.states_touching(t1, t2))
            .unwrap_or_default()
    }

    /// Everything `from` sent to `to` at exactly `t`, aggregated across states.
    pub fn outflow(
        &self,
        from: &VertexId,
        to: &VertexId,
        t: Timestamp,
        replicated: bool,
    ) -> Option<Cow<'_, Outflow>> {
        let key = FlowKey {
            peer: to.clone(),
            t,
            replicated,
        };
        let mut found: Option<Cow<'_, Outflow>> = None;
        for state in self.states_touching(from, t, t) {
            if let Some(flow) = state.outflows.get(&key) {
                found = Some(match found {
                    None => Cow::Borrowed(flow),
                    Some(prev) => {
                        let mut merged = prev.into_owned();
                        merged.absorb(flow);
                        Cow::Owned(merged)
                    }
                });
            }
        }
        found
    }

    /// Quantity `v` sent per flow key at instants `>= t`.
    pub fn flows_out_since(&self, v: &VertexId, t: Timestamp) -> BTreeMap<FlowKey, f64> {
        let mut out = BTreeMap::new();
        for state in self.states_touching(v, t, Timestamp::MAX) {
            for (k, f) in state.outflows.range(..).filter(|(k, _)| k.t >= t) {
                *out.entry(k.clone()).or_insert(0.0) += f.q;
            }
        }
        out
    }

    /// Quantity `v` received per flow key at instants within the closed range `[t1, t2]`.
    pub fn inflows_within(
        &self,
        v: &VertexId,
        t1: Timestamp,
        t2: Timestamp,
    ) -> BTreeMap<FlowKey, f64> {
        let mut out = BTreeMap::new();
        for state in self.states_touching(v, t1, t2) {
            for (k, q) in state.inflows.iter().filter(|(k, _)| t1 <= k.t && k.t <= t2) {
                *out.entry(k.clone()).or_insert(0.0) += q;
            }
        }
        out
    }

    /// Closes the open state of `v` at `state.t_start` and appends `state` as
    /// the new open state. The first state of a vertex needs no close step.
    pub fn close_and_append(
        &mut self,
        v: &VertexId,
        mut state: VertexState,
    ) -> Result<(), IndexError> {
        if &state.vertex != v {
            return Err(IndexError::WrongVertex {
                expected: v.clone(),
                found: state.vertex,
            });
        }
        state.t_end = None;
        let tl = self.timelines.entry(v.clone()).or_default();
        let key = match tl.open_key() {
            None => StateKey {
                t_start: state.t_start,
                ordinal: 0,
            },
            Some(open) => {
                if state.t_start < open.t_start {
                    return Err(IndexError::NonMonotone {
                        vertex: v.clone(),
                        open_start: open.t_start,
                        new_start: state.t_start,
                    });
                }
                let prev = tl.states.get_mut(&open).expect("open key present");
                prev.t_end = Some(state.t_start);
                StateKey {
                    t_start: state.t_start,
                    ordinal: if open.t_start == state.t_start {
                        open.ordinal + 1
                    } else {
                        0
                    },
                }
            }
        };
        if self.origin.is_none_or(|o| state.t_start < o) {
            self.origin = Some(state.t_start);
        }
        tl.states.insert(key, state);
        Ok(())
    }

    pub fn stats(&self) -> IndexStats {
        let vertices: Vec<_> = self
            .timelines
            .iter()
            .map(|(v, tl)| VertexStats {
                vertex: v.clone(),
                interactions: tl.interactions,
                states: tl.state_count(),
                ratio: crate::engine::compression_ratio(tl.interactions, tl.state_count()).ok(),
            })
            .collect();
        let states = self.total_state_count();
        IndexStats {
            raw_interactions: self.raw_interactions,
            states,
            ratio: crate::engine::compression_ratio(self.raw_interactions, states).ok(),
            vertices,
        }
    }

    // -- engine-facing mutation -------------------------------------------

    pub(crate) fn set_origin(&mut self, t: Timestamp) {
        if self.origin.is_none() {
            self.origin = Some(t);
        }
    }

    /// The open state of a registered vertex.
    pub(crate) fn open_state(&self, v: &VertexId) -> &VertexState {
        self.timelines[v]
            .open_state()
            .expect("registered vertex has a state")
    }

    pub(crate) fn open_state_mut(&mut self, v: &VertexId) -> Option<&mut VertexState> {
        let tl = self.timelines.get_mut(v)?;
        let key = tl.open_key()?;
        tl.states.get_mut(&key)
    }

    pub(crate) fn count_interaction(&mut self, src: &VertexId, dst: &VertexId) {
        self.raw_interactions += 1;
        for v in [src, dst] {
            if let Some(tl) = self.timelines.get_mut(v) {
                tl.interactions += 1;
            }
        }
    }

    pub(crate) fn entity_path_mut(&mut self, e: &EntityId) -> Option<&mut EntityPath> {
        self.entity_paths.get_mut(e)
    }

    pub(crate) fn insert_entity_path(&mut self, e: EntityId, path: EntityPath) {
        self.entity_paths.insert(e, path);
    }

    pub(crate) fn set_interaction_counts(&mut self, raw: u64, per_vertex: BTreeMap<VertexId, u64>) {
        self.raw_interactions = raw;
        for (v, n) in per_vertex {
            if let Some(tl) = self.timelines.get_mut(&v) {
                tl.interactions = n;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ts;

    fn state(v: &str, t: f64, b: f64) -> VertexState {
        let mut s = VertexState::idle(v.into(), ts(t));
        s.buffer = b;
        s
    }

    fn w1_index() -> TemporalProvenanceIndex {
        let mut idx = TemporalProvenanceIndex::new(TinConfig::default());
        let w1: VertexId = "W1".into();
        idx.close_and_append(&w1, state("W1", 1.0, 0.0)).unwrap();
        idx.close_and_append(&w1, state("W1", 3.0, 2000.0)).unwrap();
        idx.close_and_append(&w1, state("W1", 4.0, 0.0)).unwrap();
        idx
    }

    #[test]
    fn appending_closes_the_open_state() {
        let idx = w1_index();
        let w1 = "W1".into();
        let s: Vec<_> = idx.states(&w1).map(|s| (s.t_start, s.t_end)).collect();
        assert_eq!(
            s,
            vec![
                (ts(1.0), Some(ts(3.0))),
                (ts(3.0), Some(ts(4.0))),
                (ts(4.0), None)
            ]
        );
    }

    #[test]
    fn first_state_needs_no_close() {
        let mut idx = TemporalProvenanceIndex::new(TinConfig::default());
        let v = "A".into();
        idx.close_and_append(&v, state("A", 2.0, 0.0)).unwrap();
        assert_eq!(idx.state_count(&v), 1);
        assert!(idx.states(&v).next().unwrap().is_open());
    }

    #[test]
    fn earlier_append_is_rejected() {
        let mut idx = w1_index();
        let err = idx
            .close_and_append(&"W1".into(), state("W1", 3.5, 1.0))
            .unwrap_err();
        assert!(matches!(err, IndexError::NonMonotone { .. }));
        assert_eq!(idx.state_count(&"W1".into()), 3);
        assert!(matches!(
            idx.close_and_append(&"W1".into(), state("X", 9.0, 1.0)),
            Err(IndexError::WrongVertex { .. })
        ));
    }

    #[test]
    fn point_lookup_flanks() {
        let idx = w1_index();
        let w1 = "W1".into();
        assert!(idx.state_at(&w1, ts(0.0), Flank::Post).is_none());
        assert_eq!(
            idx.state_at(&w1, ts(3.5), Flank::Post).unwrap().buffer,
            2000.0
        );
        assert_eq!(
            idx.state_at(&w1, ts(4.0), Flank::Pre).unwrap().buffer,
            2000.0
        );
        assert_eq!(idx.state_at(&w1, ts(4.0), Flank::Post).unwrap().buffer, 0.0);
        assert_eq!(
            idx.state_at(&w1, ts(3.0), Flank::Pre).unwrap().t_start,
            ts(1.0)
        );
        assert!(idx.state_at(&w1, ts(1.0), Flank::Pre).is_none());
        assert!(idx.state_at(&"nope".into(), ts(3.5), Flank::Post).is_none());
    }

    #[test]
    fn range_lookup() {
        let idx = w1_index();
        let w1 = "W1".into();
        let starts = |a, b| -> Vec<f64> {
            idx.states_in(&w1, ts(a), ts(b))
                .unwrap()
                .iter()
                .map(|s| s.t_start.value())
                .collect()
        };
        assert_eq!(starts(3.0, 4.0), vec![3.0, 4.0]);
        assert_eq!(starts(0.0, 100.0), vec![1.0, 3.0, 4.0]);
        assert_eq!(starts(3.5, 3.5), vec![3.0]);
        assert_eq!(starts(0.0, 0.5), Vec::<f64>::new());
        assert!(idx.states_in(&w1, ts(2.0), ts(1.0)).is_err());
    }

    #[test]
    fn zero_length_states_hide_from_point_lookup() {
        let mut idx = TemporalProvenanceIndex::new(TinConfig::default());
        let v: VertexId = "V".into();
        idx.close_and_append(&v, state("V", 1.0, 0.0)).unwrap();
        idx.close_and_append(&v, state("V", 2.0, 1.0)).unwrap();
        idx.close_and_append(&v, state("V", 2.0, 2.0)).unwrap();
        idx.close_and_append(&v, state("V", 3.0, 0.0)).unwrap();
        assert_eq!(idx.state_at(&v, ts(2.0), Flank::Post).unwrap().buffer, 2.0);
        assert_eq!(idx.state_at(&v, ts(2.5), Flank::Post).unwrap().buffer, 2.0);
        assert_eq!(idx.state_at(&v, ts(2.0), Flank::Pre).unwrap().buffer, 0.0);
        assert_eq!(idx.states_in(&v, ts(2.0), ts(2.0)).unwrap().len(), 1);
        assert_eq!(idx.states_touching(&v, ts(2.0), ts(2.0)).len(), 3);
    }
}
