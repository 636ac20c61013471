//! Query definitions evaluated over a [`ReplayTimeline`].

use std::collections::{BTreeMap, HashMap};

use super::{Multiset, OracleHop, OracleKey, ReplayTimeline};
use crate::error::QueryError;
use crate::index::{Flank, ProvKey, ProvMap};
use crate::model::{Timestamp, VertexId};
use crate::query::{
    Answer, Delivery, Depth, ForwardAnswer, Horizon, ProvenanceAnswer, ProvenanceDelta, Query,
};

type Terms = BTreeMap<(VertexId, Timestamp), f64>;

#[derive(Clone, Default)]
struct Expansion {
    terms: Terms,
    depth: u32,
    truncated: bool,
}

type StackEntry = (VertexId, OracleKey);

/// Stack entries at instant `t`. Birth times never grow towards the top of
/// the stack, so these sit together at the top.
fn same_instant(stack: &[StackEntry], t: Timestamp) -> impl Iterator<Item = &StackEntry> + '_ {
    stack.iter().rev().take_while(move |(_, k)| k.1 == t)
}

fn on_stack(stack: &[StackEntry], holder: &VertexId, key: &OracleKey) -> bool {
    same_instant(stack, key.1).any(|(w, k)| w == holder && k == key)
}

/// A recursion's result depends on the stack only through the entries it
/// could cycle back to.
fn stack_context(stack: &[StackEntry], t: Timestamp) -> Vec<StackEntry> {
    let mut c: Vec<_> = same_instant(stack, t).cloned().collect();
    c.sort();
    c
}

type MemoKey<X> = (VertexId, OracleKey, X, Vec<StackEntry>);

/// Answers queries from the replay. Keeps memo tables between queries.
pub struct Oracle<'a> {
    tl: &'a ReplayTimeline,
    expansions: HashMap<MemoKey<Option<u32>>, Expansion>,
}

fn to_prov_map(m: &Multiset) -> ProvMap {
    m.iter()
        .map(|((o, t, r), q)| {
            (
                ProvKey {
                    origin: o.clone(),
                    birth: *t,
                    via_replication: *r,
                },
                *q,
            )
        })
        .collect()
}

impl<'a> Oracle<'a> {
    pub fn new(tl: &'a ReplayTimeline) -> Self {
        Self {
            tl,
            expansions: HashMap::new(),
        }
    }

    pub fn run(&mut self, query: &Query) -> Answer {
        match query {
            Query::Backward { v, t, depth, flank } => {
                Answer::Provenance(self.q1(v, *t, *depth, *flank))
            }
            Query::Forward { s, t, depth } => Answer::Forward(self.q2(s, *t, *depth)),
            Query::TemporalLineage { v, t1, t2 } => match self.q3(v, *t1, *t2) {
                Ok(a) => Answer::Provenance(a),
                Err(e) => Answer::Rejected(e),
            },
            Query::FlowLineage { s, d, via, horizon } => match self.q4(s, d, via, *horizon) {
                Ok(q) => Answer::Flow(q),
                Err(e) => Answer::Rejected(e),
            },
            Query::Versioning { v, t1, t2 } => match self.q5(v, *t1, *t2) {
                Ok(d) => Answer::Delta(d),
                Err(e) => Answer::Rejected(e),
            },
        }
    }

    fn discrete(&self) -> bool {
        self.tl.config.data_class == crate::model::DataClass::Discrete
    }

    // -- Q1 -----------------------------------------------------------------

    pub fn q1(
        &mut self,
        v: &VertexId,
        t: Timestamp,
        depth: Depth,
        flank: Flank,
    ) -> ProvenanceAnswer {
        let limit = match depth {
            Depth::Limited(n) => Some(n.get()),
            Depth::Unlimited => None,
        };
        if self.discrete() {
            return self.q1_entities(v, t, limit, flank);
        }
        let Some(content) = self.tl.content_at(v, t, flank == Flank::Pre) else {
            return ProvenanceAnswer::default();
        };
        let mut total = Expansion::default();
        for (key, q) in content.prov.clone() {
            let mut stack = Vec::new();
            let x = self.expand(v, &key, limit, &mut stack);
            for (term, f) in x.terms {
                *total.terms.entry(term).or_insert(0.0) += q * f;
            }
            total.depth = total.depth.max(x.depth);
            total.truncated |= x.truncated;
        }
        answer(total)
    }

    /// Where one unit of entry `key` held at `v` ultimately came from.
    fn expand(
        &mut self,
        v: &VertexId,
        key: &OracleKey,
        limit: Option<u32>,
        stack: &mut Vec<StackEntry>,
    ) -> Expansion {
        let memo_key = (v.clone(), key.clone(), limit, stack_context(stack, key.1));
        if let Some(x) = self.expansions.get(&memo_key) {
            return x.clone();
        }
        let (u, tb, repl) = key;
        let tl = self.tl;
        let here = (u.clone(), *tb);
        let mut x = Expansion {
            depth: 1,
            ..Expansion::default()
        };
        match tl.flow(u, v, *tb, *repl) {
            None => {
                x.terms.insert(here, 1.0);
            }
            Some(f) if limit == Some(1) => {
                x.terms.insert(here, 1.0);
                x.truncated = !f.consumed.is_empty();
            }
            Some(f) => {
                if f.minted > 0.0 {
                    x.terms.insert(here, f.minted / f.q);
                }
                stack.push((v.clone(), key.clone()));
                for (k2, c) in &f.consumed {
                    let share = c / f.q;
                    if on_stack(stack, u, k2) {
                        *x.terms.entry((k2.0.clone(), k2.1)).or_insert(0.0) += share;
                        x.depth = x.depth.max(2);
                        x.truncated = true;
                    } else {
                        let sub = self.expand(u, k2, limit.map(|l| l - 1), stack);
                        for (term, g) in sub.terms {
                            *x.terms.entry(term).or_insert(0.0) += share * g;
                        }
                        x.depth = x.depth.max(sub.depth + 1);
                        x.truncated |= sub.truncated;
                    }
                }
                stack.pop();
            }
        }
        self.expansions.insert(memo_key, x.clone());
        x
    }

    fn q1_entities(
        &self,
        v: &VertexId,
        t: Timestamp,
        limit: Option<u32>,
        flank: Flank,
    ) -> ProvenanceAnswer {
        let pre = flank == Flank::Pre;
        let Some(content) = self.tl.content_at(v, t, pre) else {
            return ProvenanceAnswer::default();
        };
        let mut total = Expansion::default();
        for e in &content.entities {
            let hops = &self.tl.hops[e];
            let visible = |h: &OracleHop| if pre { h.t < t } else { h.t <= t };
            let Some(mut i) = hops.iter().rposition(|h| &h.to == v && visible(h)) else {
                continue;
            };
            let mut level = 1;
            while let Some(p) = hops[..i].iter().rposition(|h| h.to == hops[i].from) {
                if limit == Some(level) {
                    total.truncated = true;
                    break;
                }
                i = p;
                level += 1;
            }
            *total
                .terms
                .entry((hops[i].from.clone(), hops[i].t))
                .or_insert(0.0) += 1.0;
            total.depth = total.depth.max(level);
        }
        answer(total)
    }

    // -- Q2 -----------------------------------------------------------------

    pub fn q2(&mut self, s: &VertexId, t0: Timestamp, depth: Depth) -> ForwardAnswer {
        let limit = match depth {
            Depth::Limited(n) => Some(n.get()),
            Depth::Unlimited => None,
        };
        let tol = self.tl.config.float_tolerance;
        let mut agg: BTreeMap<(VertexId, VertexId, Timestamp), (f64, f64)> = BTreeMap::new();
        if self.discrete() {
            for hops in self.tl.hops.values() {
                let mut lv: Vec<Option<u32>> = Vec::new();
                for (j, h) in hops.iter().enumerate() {
                    let l = if h.t < t0 {
                        None
                    } else if &h.from == s {
                        Some(1)
                    } else {
                        hops[..j]
                            .iter()
                            .rposition(|p| p.to == h.from)
                            .and_then(|p| lv[p])
                            .map(|l| l + 1)
                    };
                    lv.push(l);
                    let e = agg
                        .entry((h.from.clone(), h.to.clone(), h.t))
                        .or_insert((0.0, 0.0));
                    if h.t >= t0 {
                        e.1 += 1.0;
                    }
                    if l.is_some_and(|l| limit.is_none_or(|m| l <= m)) {
                        e.0 += 1.0;
                    }
                }
            }
            agg.retain(|_, (m, _)| *m > 0.0);
        } else {
            let mut memo = HashMap::new();
            let mut flows: Vec<_> = self.tl.all_flows().filter(|(k, _)| k.2 >= t0).collect();
            flows.sort_by(|a, b| a.0.cmp(b.0));
            for ((src, dst, t, repl), f) in flows {
                let key = (src.clone(), *t, *repl);
                let share = f.q * self.marked(s, t0, dst, &key, limit, &mut memo, &mut Vec::new());
                if share > tol {
                    let e = agg
                        .entry((src.clone(), dst.clone(), *t))
                        .or_insert((0.0, 0.0));
                    e.0 += share;
                    e.1 += f.q;
                }
            }
        }
        let deliveries = agg
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

    #[allow(clippy::too_many_arguments)]
    fn marked(
        &self,
        s: &VertexId,
        t0: Timestamp,
        v: &VertexId,
        key: &OracleKey,
        limit: Option<u32>,
        memo: &mut HashMap<MemoKey<Option<u32>>, f64>,
        stack: &mut Vec<StackEntry>,
    ) -> f64 {
        let (u, tb, repl) = key;
        if *tb < t0 {
            return 0.0;
        }
        if u == s {
            return 1.0;
        }
        if limit == Some(1) {
            return 0.0;
        }
        let memo_key = (v.clone(), key.clone(), limit, stack_context(stack, *tb));
        if let Some(&m) = memo.get(&memo_key) {
            return m;
        }
        let Some(f) = self.tl.flow(u, v, *tb, *repl) else {
            return 0.0;
        };
        stack.push((v.clone(), key.clone()));
        let mut sum = 0.0;
        for (k2, c) in &f.consumed {
            if !on_stack(stack, u, k2) {
                sum += c / f.q * self.marked(s, t0, u, k2, limit.map(|l| l - 1), memo, stack);
            }
        }
        stack.pop();
        memo.insert(memo_key, sum);
        sum
    }

    // -- Q3 -----------------------------------------------------------------

    pub fn q3(
        &self,
        v: &VertexId,
        t1: Timestamp,
        t2: Timestamp,
    ) -> Result<ProvenanceAnswer, QueryError> {
        if t1 > t2 {
            return Err(QueryError::InvertedRange { t1, t2 });
        }
        let mut x = Expansion::default();
        for r in self.tl.interactions() {
            if &r.dst == v && t1 <= r.t && r.t <= t2 {
                *x.terms.entry((r.src.clone(), r.t)).or_insert(0.0) += r.q;
            }
        }
        x.depth = u32::from(!x.terms.is_empty());
        Ok(answer(x))
    }

    // -- Q4 -----------------------------------------------------------------

    pub fn q4(
        &self,
        s: &VertexId,
        d: &VertexId,
        via: &VertexId,
        horizon: Horizon,
    ) -> Result<f64, QueryError> {
        if s == d || s == via || d == via {
            return Err(QueryError::NonDistinctVertices);
        }
        if horizon.start > horizon.end {
            return Ok(0.0);
        }
        let inside = |t: Timestamp| horizon.start <= t && t <= horizon.end;
        if self.discrete() {
            let mut n = 0.0;
            for hops in self.tl.hops.values() {
                for (j, h) in hops.iter().enumerate() {
                    if &h.to != d || !inside(h.t) {
                        continue;
                    }
                    let mut i = j;
                    let mut passed = false;
                    loop {
                        if hops[i].t < horizon.start {
                            break;
                        }
                        passed |= &hops[i].from == via;
                        match hops[..i].iter().rposition(|p| p.to == hops[i].from) {
                            Some(p) => i = p,
                            None => {
                                if &hops[i].from == s && passed {
                                    n += 1.0;
                                }
                                break;
                            }
                        }
                    }
                }
            }
            return Ok(n);
        }
        let mut arrivals: BTreeMap<OracleKey, f64> = BTreeMap::new();
        for r in self.tl.interactions() {
            if &r.dst == d && inside(r.t) {
                *arrivals
                    .entry((r.src.clone(), r.t, r.replicate))
                    .or_insert(0.0) += r.q;
            }
        }
        let mut memo = HashMap::new();
        let mut total = 0.0;
        for (key, q) in arrivals {
            total += q * self.through(
                s,
                via,
                horizon.start,
                d,
                &key,
                false,
                &mut memo,
                &mut Vec::new(),
            );
        }
        Ok(total)
    }

    #[allow(clippy::too_many_arguments)]
    fn through(
        &self,
        s: &VertexId,
        via: &VertexId,
        h0: Timestamp,
        v: &VertexId,
        key: &OracleKey,
        passed: bool,
        memo: &mut HashMap<MemoKey<bool>, f64>,
        stack: &mut Vec<StackEntry>,
    ) -> f64 {
        let (u, tb, repl) = key;
        if *tb < h0 {
            return 0.0;
        }
        let memo_key = (v.clone(), key.clone(), passed, stack_context(stack, *tb));
        if let Some(&m) = memo.get(&memo_key) {
            return m;
        }
        let Some(f) = self.tl.flow(u, v, *tb, *repl) else {
            return 0.0;
        };
        let now_passed = passed || u == via;
        let mut sum = if u == s && now_passed {
            f.minted / f.q
        } else {
            0.0
        };
        stack.push((v.clone(), key.clone()));
        for (k2, c) in &f.consumed {
            if !on_stack(stack, u, k2) {
                sum += c / f.q * self.through(s, via, h0, u, k2, now_passed, memo, stack);
            }
        }
        stack.pop();
        memo.insert(memo_key, sum);
        sum
    }

    // -- Q5 -----------------------------------------------------------------

    pub fn q5(
        &self,
        v: &VertexId,
        t1: Timestamp,
        t2: Timestamp,
    ) -> Result<ProvenanceDelta, QueryError> {
        if t1 >= t2 {
            return Err(QueryError::NonIncreasingTimes { t1, t2 });
        }
        let side = |t| {
            self.tl
                .content_at(v, t, false)
                .map_or((ProvMap::new(), 0.0), |c| (to_prov_map(&c.prov), c.buffer))
        };
        let (p1, b1) = side(t1);
        let (p2, b2) = side(t2);
        Ok(ProvenanceDelta::between(&p1, b1, &p2, b2))
    }
}

fn answer(x: Expansion) -> ProvenanceAnswer {
    let mut a = ProvenanceAnswer {
        entries: Vec::new(),
        depth_reached: x.depth,
        truncated: x.truncated,
    };
    for ((origin, t), q) in x.terms {
        if q > 0.0 {
            a.entries.push(crate::query::AnswerEntry { origin, t, q });
        }
    }
    a
}
