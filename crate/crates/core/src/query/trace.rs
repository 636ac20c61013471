//! Recursive tracing through outflow records, with per-tracer memoization.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::rc::Rc;

use super::{entities, Delivery, Depth, ForwardAnswer, Horizon, ProvenanceAnswer};
use crate::error::QueryError;
use crate::index::{Flank, FlowKey, ProvKey, TemporalProvenanceIndex};
use crate::model::{Timestamp, VertexId};

type Terms = BTreeMap<(VertexId, Timestamp), f64>;

/// Re-attribution of one unit of a provenance entry.
#[derive(Debug, Default)]
struct Frame {
    terms: Terms,
    depth: u32,
    truncated: bool,
}

type Link = (VertexId, ProvKey);

/// Holder and entry of every frame on the current recursion path.
///
/// Flow times never increase along a path, so a cycle (possible only between
/// flows aggregated at one instant) can only close on the same-instant tail.
/// A frame's value depends on nothing else, which makes that tail a sound
/// memo context.
#[derive(Default)]
struct Path(Vec<Link>);

impl Path {
    fn tail(&self, t: Timestamp) -> impl Iterator<Item = &Link> + '_ {
        self.0.iter().rev().take_while(move |(_, k)| k.birth == t)
    }

    fn closes(&self, holder: &VertexId, key: &ProvKey) -> bool {
        self.tail(key.birth).any(|(w, k)| w == holder && k == key)
    }

    fn context(&self, t: Timestamp) -> Vec<Link> {
        let mut c: Vec<Link> = self.tail(t).cloned().collect();
        c.sort();
        c
    }
}

/// Memo key: holder, entry, remaining depth, same-instant ancestors.
type FrameKey = (VertexId, ProvKey, Option<u32>, Vec<Link>);

/// Query evaluator over one index. Caches survive across queries, so a
/// single tracer answers a batch of queries much faster than fresh calls.
pub struct Tracer<'a> {
    index: &'a TemporalProvenanceIndex,
    backward: HashMap<FrameKey, Rc<Frame>>,
    forward_ctx: Option<(VertexId, Timestamp)>,
    forward: HashMap<FrameKey, f64>,
    lineage_ctx: Option<(VertexId, VertexId, Timestamp)>,
    lineage: HashMap<(VertexId, ProvKey, bool, Vec<Link>), f64>,
}

fn key_of(fk: &FlowKey) -> ProvKey {
    ProvKey {
        origin: fk.peer.clone(),
        birth: fk.t,
        via_replication: fk.replicated,
    }
}

impl<'a> Tracer<'a> {
    pub fn new(index: &'a TemporalProvenanceIndex) -> Self {
        Self {
            index,
            backward: HashMap::new(),
            forward_ctx: None,
            forward: HashMap::new(),
            lineage_ctx: None,
            lineage: HashMap::new(),
        }
    }

    pub fn index(&self) -> &'a TemporalProvenanceIndex {
        self.index
    }

    // -- Q1 -----------------------------------------------------------------

    pub fn q1_backward(
        &mut self,
        v: &VertexId,
        t: Timestamp,
        depth: Depth,
        flank: Flank,
    ) -> ProvenanceAnswer {
        if self.index.is_discrete() {
            return entities::backward(self.index, v, t, depth, flank);
        }
        let Some(state) = self.index.state_at(v, t, flank) else {
            return ProvenanceAnswer::default();
        };
        let mut terms = Terms::new();
        let mut depth_reached = 0;
        let mut truncated = false;
        let mut path = Path::default();
        for (key, &q) in &state.prov {
            let frame = self.backward_frame(v, key, depth.budget(), &mut path);
            for (term, f) in &frame.terms {
                *terms.entry(term.clone()).or_insert(0.0) += q * f;
            }
            depth_reached = depth_reached.max(frame.depth);
            truncated |= frame.truncated;
        }
        ProvenanceAnswer::from_terms(terms, depth_reached, truncated)
    }

    fn backward_frame(
        &mut self,
        v: &VertexId,
        key: &ProvKey,
        budget: Option<u32>,
        path: &mut Path,
    ) -> Rc<Frame> {
        let memo_key = (v.clone(), key.clone(), budget, path.context(key.birth));
        if let Some(f) = self.backward.get(&memo_key) {
            return Rc::clone(f);
        }
        let index = self.index;
        let own = (key.origin.clone(), key.birth);
        let mut frame = Frame {
            depth: 1,
            ..Frame::default()
        };
        match index.outflow(&key.origin, v, key.birth, key.via_replication) {
            None => {
                frame.terms.insert(own, 1.0);
            }
            Some(record) if budget == Some(1) => {
                frame.terms.insert(own, 1.0);
                frame.truncated = !record.consumed.is_empty();
            }
            Some(record) => {
                if record.minted > 0.0 {
                    frame.terms.insert(own, record.minted / record.q);
                }
                path.0.push((v.clone(), key.clone()));
                for (k2, c) in &record.consumed {
                    let w = c / record.q;
                    if path.closes(&key.origin, k2) {
                        *frame
                            .terms
                            .entry((k2.origin.clone(), k2.birth))
                            .or_insert(0.0) += w;
                        frame.depth = frame.depth.max(2);
                        frame.truncated = true;
                        continue;
                    }
                    let child = self.backward_frame(&key.origin, k2, budget.map(|b| b - 1), path);
                    for (term, f) in &child.terms {
                        *frame.terms.entry(term.clone()).or_insert(0.0) += w * f;
                    }
                    frame.depth = frame.depth.max(child.depth + 1);
                    frame.truncated |= child.truncated;
                }
                path.0.pop();
            }
        }
        let frame = Rc::new(frame);
        self.backward.insert(memo_key, Rc::clone(&frame));
        frame
    }

    // -- Q2 -----------------------------------------------------------------

    pub fn q2_forward(&mut self, s: &VertexId, t: Timestamp, depth: Depth) -> ForwardAnswer {
        if self.index.is_discrete() {
            return entities::forward(self.index, s, t, depth);
        }
        let ctx = Some((s.clone(), t));
        if self.forward_ctx != ctx {
            self.forward.clear();
            self.forward_ctx = ctx;
        }
        let tol = self.index.config().float_tolerance;
        let index = self.index;
        let mut earliest: BTreeMap<VertexId, Timestamp> = BTreeMap::new();
        let mut expanded: BTreeSet<VertexId> = BTreeSet::new();
        let mut queue = BinaryHeap::new();
        let mut deliveries: BTreeMap<(VertexId, VertexId, Timestamp), (f64, f64)> = BTreeMap::new();
        earliest.insert(s.clone(), t);
        queue.push(Reverse((t, s.clone())));
        while let Some(Reverse((te, u))) = queue.pop() {
            if !expanded.insert(u.clone()) {
                continue;
            }
            for (fk, q) in index.flows_out_since(&u, te) {
                let share = q * self.marked(
                    &fk.peer,
                    &key_of_sender(&u, &fk),
                    depth.budget(),
                    &mut Path::default(),
                );
                if share > 0.0 && earliest.get(&fk.peer).is_none_or(|&e| fk.t < e) {
                    earliest.insert(fk.peer.clone(), fk.t);
                    queue.push(Reverse((fk.t, fk.peer.clone())));
                }
                if share > tol {
                    let d = deliveries
                        .entry((u.clone(), fk.peer.clone(), fk.t))
                        .or_insert((0.0, 0.0));
                    d.0 += share;
                    d.1 += q;
                }
            }
        }
        let deliveries = deliveries
            .into_iter()
            .map(|((from, to, t), (q_from_source, hop_total))| Delivery {
                from,
                to,
                t,
                q_from_source,
                hop_total,
            })
            .collect();
        ForwardAnswer::from_deliveries(s.clone(), deliveries)
    }

    /// Fraction of entry `key` held at `v` that left the current source at or
    /// after the current start time, within `budget` hops.
    fn marked(&mut self, v: &VertexId, key: &ProvKey, budget: Option<u32>, path: &mut Path) -> f64 {
        let (s, t0) = self.forward_ctx.clone().expect("forward context set");
        if key.birth < t0 {
            return 0.0;
        }
        if key.origin == s {
            return 1.0;
        }
        if budget == Some(1) {
            return 0.0;
        }
        let memo_key = (v.clone(), key.clone(), budget, path.context(key.birth));
        if let Some(&f) = self.forward.get(&memo_key) {
            return f;
        }
        let index = self.index;
        let Some(record) = index.outflow(&key.origin, v, key.birth, key.via_replication) else {
            return 0.0;
        };
        path.0.push((v.clone(), key.clone()));
        let mut total = 0.0;
        for (k2, c) in &record.consumed {
            if !path.closes(&key.origin, k2) {
                total += c / record.q * self.marked(&key.origin, k2, budget.map(|b| b - 1), path);
            }
        }
        path.0.pop();
        self.forward.insert(memo_key, total);
        total
    }

    // -- Q4 -----------------------------------------------------------------

    pub fn q4_flow_lineage(
        &mut self,
        s: &VertexId,
        d: &VertexId,
        via: &VertexId,
        horizon: Horizon,
    ) -> Result<f64, QueryError> {
        if s == d || s == via || d == via {
            return Err(QueryError::NonDistinctVertices);
        }
        if horizon.is_empty() {
            return Ok(0.0);
        }
        if self.index.is_discrete() {
            return Ok(entities::flow_lineage(self.index, s, d, via, horizon));
        }
        let ctx = Some((s.clone(), via.clone(), horizon.start));
        if self.lineage_ctx != ctx {
            self.lineage.clear();
            self.lineage_ctx = ctx;
        }
        let mut total = 0.0;
        for (fk, q) in self.index.inflows_within(d, horizon.start, horizon.end) {
            total += q * self.through(d, &key_of(&fk), false, &mut Path::default());
        }
        Ok(total)
    }

    /// Fraction of entry `key` at `v` minted at the source no earlier than the
    /// horizon start and held by `via` on its way (or already known to have been).
    fn through(&mut self, v: &VertexId, key: &ProvKey, passed: bool, path: &mut Path) -> f64 {
        let (s, via, h0) = self.lineage_ctx.clone().expect("lineage context set");
        if key.birth < h0 {
            return 0.0;
        }
        let memo_key = (v.clone(), key.clone(), passed, path.context(key.birth));
        if let Some(&f) = self.lineage.get(&memo_key) {
            return f;
        }
        let index = self.index;
        let Some(record) = index.outflow(&key.origin, v, key.birth, key.via_replication) else {
            return 0.0;
        };
        let passed = passed || key.origin == via;
        let mut total = if key.origin == s && passed {
            record.minted / record.q
        } else {
            0.0
        };
        path.0.push((v.clone(), key.clone()));
        for (k2, c) in &record.consumed {
            if !path.closes(&key.origin, k2) {
                total += c / record.q * self.through(&key.origin, k2, passed, path);
            }
        }
        path.0.pop();
        self.lineage.insert(memo_key, total);
        total
    }
}

/// The entry a flow `u -> peer` creates at its receiver.
fn key_of_sender(u: &VertexId, fk: &FlowKey) -> ProvKey {
    ProvKey {
        origin: u.clone(),
        birth: fk.t,
        via_replication: fk.replicated,
    }
}
