//! Discrete-mode tracing by walking entity paths.

use std::collections::BTreeMap;

use super::{Delivery, Depth, ForwardAnswer, Horizon, ProvenanceAnswer};
use crate::index::{EntityPath, Flank, TemporalProvenanceIndex};
use crate::model::{Timestamp, VertexId};

pub(super) fn backward(
    index: &TemporalProvenanceIndex,
    v: &VertexId,
    t: Timestamp,
    depth: Depth,
    flank: Flank,
) -> ProvenanceAnswer {
    let Some(state) = index.state_at(v, t, flank) else {
        return ProvenanceAnswer::default();
    };
    let budget = depth.budget();
    let mut terms = BTreeMap::new();
    let mut depth_reached = 0;
    let mut truncated = false;
    for e in &state.entities {
        let Some(path) = index.entity_path(e) else {
            continue;
        };
        let Some(mut i) = path.arrival_into(v, t, flank) else {
            continue;
        };
        let mut level = 1;
        loop {
            let pred = path.predecessor(i);
            if pred.is_some() && budget == Some(level) {
                truncated = true;
                break;
            }
            match pred {
                Some(p) => {
                    i = p;
                    level += 1;
                }
                None => break,
            }
        }
        let hop = &path.hops[i];
        *terms.entry((hop.from.clone(), hop.t)).or_insert(0.0) += 1.0;
        depth_reached = depth_reached.max(level);
    }
    ProvenanceAnswer::from_terms(terms, depth_reached, truncated)
}

/// Hop level of each hop counted from the latest departure from `s` at or
/// after `t0`; `None` for hops not carrying such an entity.
fn forward_levels(path: &EntityPath, s: &VertexId, t0: Timestamp) -> Vec<Option<u32>> {
    let mut levels: Vec<Option<u32>> = Vec::with_capacity(path.hops.len());
    for (j, hop) in path.hops.iter().enumerate() {
        let level = if hop.t < t0 {
            None
        } else if &hop.from == s {
            Some(1)
        } else {
            path.predecessor(j).and_then(|p| levels[p]).map(|l| l + 1)
        };
        levels.push(level);
    }
    levels
}

pub(super) fn forward(
    index: &TemporalProvenanceIndex,
    s: &VertexId,
    t0: Timestamp,
    depth: Depth,
) -> ForwardAnswer {
    let budget = depth.budget();
    let mut totals: BTreeMap<(VertexId, VertexId, Timestamp), f64> = BTreeMap::new();
    let mut marked: BTreeMap<(VertexId, VertexId, Timestamp), f64> = BTreeMap::new();
    for (_, path) in index.entity_paths() {
        let levels = forward_levels(path, s, t0);
        for (hop, level) in path.hops.iter().zip(levels) {
            let key = (hop.from.clone(), hop.to.clone(), hop.t);
            if hop.t >= t0 {
                *totals.entry(key.clone()).or_insert(0.0) += 1.0;
            }
            if level.is_some_and(|l| budget.is_none_or(|b| l <= b)) {
                *marked.entry(key).or_insert(0.0) += 1.0;
            }
        }
    }
    let deliveries = marked
        .into_iter()
        .map(|(key, q)| Delivery {
            hop_total: totals[&key],
            from: key.0,
            to: key.1,
            t: key.2,
            q_from_source: q,
        })
        .collect();
    ForwardAnswer::from_deliveries(s.clone(), deliveries)
}

pub(super) fn flow_lineage(
    index: &TemporalProvenanceIndex,
    s: &VertexId,
    d: &VertexId,
    via: &VertexId,
    horizon: Horizon,
) -> f64 {
    let mut total = 0.0;
    for (_, path) in index.entity_paths() {
        for (j, hop) in path.hops.iter().enumerate() {
            if &hop.to != d || hop.t < horizon.start || hop.t > horizon.end {
                continue;
            }
            let mut i = j;
            let mut passed = false;
            let counted = loop {
                let h = &path.hops[i];
                if h.t < horizon.start {
                    break false;
                }
                passed |= &h.from == via;
                match path.predecessor(i) {
                    Some(p) => i = p,
                    None => break &h.from == s && passed,
                }
            };
            if counted {
                total += 1.0;
            }
        }
    }
    total
}
