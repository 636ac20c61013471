//! Incremental state engine.
//!
//! Applies interactions and epoch markers in log order, maintaining each
//! vertex's buffer and provenance and deciding where state boundaries fall.
//! A state's provenance entries are keyed by the last hop that delivered the
//! quantity; each outflow records which sender entries it consumed and how
//! much the sender minted, so deeper origins can be traced through the index.

mod attribution;

use std::borrow::Borrow;
use std::collections::{BTreeSet, HashSet};

use serde::Serialize;

pub use attribution::{attribute_outflow, mint_birth, Attribution};

use crate::error::{EngineError, ZeroStates};
use crate::index::{
    EntityPath, Flank, FlowKey, Hop, Outflow, PhaseKind, ProvKey, ProvMap, TemporalProvenanceIndex,
    VertexState,
};
use crate::model::{
    BoundaryPolicy, DataClass, EntityId, Interaction, LogRecord, Timestamp, TinConfig, VertexId,
};

/// Why a new state was opened.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryReason {
    /// The vertex was seen for the first time.
    FirstState,
    /// Accumulating, depleting or idle regime changed.
    PhaseFlip,
    /// An origin joined the buffer or was fully depleted from it.
    OriginSetChange,
    /// Buffer or provenance changed at a later instant than the state start.
    ContentChange,
    Epoch,
    BucketCrossing,
    PerInteraction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateTransition {
    Opened {
        t_start: Timestamp,
        reason: BoundaryReason,
    },
    Updated {
        t: Timestamp,
    },
}

pub type Transitions = Vec<(VertexId, StateTransition)>;

pub fn compression_ratio(raw_count: u64, state_count: usize) -> Result<f64, ZeroStates> {
    if state_count == 0 {
        Err(ZeroStates)
    } else {
        Ok(raw_count as f64 / state_count as f64)
    }
}

/// New content for a vertex after one interaction.
struct Content {
    buffer: f64,
    prov: ProvMap,
    entities: BTreeSet<EntityId>,
    dust: f64,
}

impl Content {
    fn of(s: &VertexState) -> Self {
        Self {
            buffer: s.buffer,
            prov: s.prov.clone(),
            entities: s.entities.clone(),
            dust: s.dust,
        }
    }

    fn differs_from(&self, s: &VertexState) -> bool {
        self.buffer != s.buffer || self.prov != s.prov || self.entities != s.entities
    }

    fn install(self, s: &mut VertexState) {
        s.buffer = self.buffer;
        s.prov = self.prov;
        s.entities = self.entities;
        s.dust = self.dust;
    }
}

/// Entity movements of one discrete interaction, checked before any mutation.
struct EntityPlan {
    newborn: Vec<EntityId>,
    moved: Vec<(EntityId, ProvKey)>,
}

/// Single-writer ingestion loop over a [`TemporalProvenanceIndex`].
#[derive(Clone, Debug)]
pub struct Engine {
    index: TemporalProvenanceIndex,
    last_t: Option<Timestamp>,
    next_seq: u64,
}

impl Engine {
    pub fn new(config: TinConfig) -> Result<Self, EngineError> {
        config.validate().map_err(EngineError::Config)?;
        Ok(Self {
            index: TemporalProvenanceIndex::new(config),
            last_t: None,
            next_seq: 0,
        })
    }

    pub fn config(&self) -> &TinConfig {
        self.index.config()
    }

    pub fn index(&self) -> &TemporalProvenanceIndex {
        &self.index
    }

    pub fn finish(self) -> TemporalProvenanceIndex {
        self.index
    }

    pub fn apply_record(&mut self, record: &LogRecord) -> Result<Transitions, EngineError> {
        match record {
            LogRecord::Interaction(r) => self.apply(r),
            LogRecord::Epoch(e) => self.mark_epoch(&e.vertex, e.t, &e.label),
        }
    }

    fn check_time(&self, t: Timestamp) -> Result<(), EngineError> {
        match self.last_t {
            Some(last) if t < last => Err(EngineError::TimeRegression { last, found: t }),
            _ => Ok(()),
        }
    }

    /// Registers `v` if unseen and materializes bucket crossings up to `t`.
    fn prepare(&mut self, v: &VertexId, t: Timestamp, out: &mut Transitions) {
        if !self.index.contains_vertex(v) {
            let origin = self.index.origin().unwrap_or(t);
            self.index
                .close_and_append(v, VertexState::idle(v.clone(), origin))
                .expect("first state of a vertex");
            out.push((
                v.clone(),
                StateTransition::Opened {
                    t_start: origin,
                    reason: BoundaryReason::FirstState,
                },
            ));
        }
        let BoundaryPolicy::TimeBucket { delta } = self.config().boundary else {
            return;
        };
        let start = self.index.open_state(v).t_start.value();
        let mut k = (start / delta).floor();
        while k * delta <= start {
            k += 1.0;
        }
        while k * delta <= t.value() {
            let b = Timestamp::new(k * delta).expect("bucket boundary is finite");
            let next = self.index.open_state(v).successor(b);
            self.index
                .close_and_append(v, next)
                .expect("monotone bucket boundary");
            out.push((
                v.clone(),
                StateTransition::Opened {
                    t_start: b,
                    reason: BoundaryReason::BucketCrossing,
                },
            ));
            k += 1.0;
        }
    }

    /// Moves `v` to new content at `t`, either in place or by opening a state.
    fn transition(
        &mut self,
        v: &VertexId,
        t: Timestamp,
        kind: PhaseKind,
        content: Option<Content>,
    ) -> StateTransition {
        let cur = self.index.open_state(v);
        let reason = match self.config().boundary {
            BoundaryPolicy::PerInteraction => (cur.phase != PhaseKind::Idle || cur.t_start < t)
                .then_some(BoundaryReason::PerInteraction),
            BoundaryPolicy::PhaseChange | BoundaryPolicy::TimeBucket { .. } => {
                if t <= cur.t_start {
                    None
                } else if cur.phase != kind {
                    Some(BoundaryReason::PhaseFlip)
                } else if content.as_ref().is_some_and(|c| {
                    c.prov.keys().map(|k| &k.origin).collect::<BTreeSet<_>>()
                        != cur.prov.keys().map(|k| &k.origin).collect()
                }) {
                    Some(BoundaryReason::OriginSetChange)
                } else if content.as_ref().is_some_and(|c| c.differs_from(cur)) {
                    Some(BoundaryReason::ContentChange)
                } else {
                    None
                }
            }
        };
        match reason {
            Some(reason) => {
                let mut next = cur.successor(t);
                next.phase = kind;
                if let Some(c) = content {
                    c.install(&mut next);
                }
                self.index
                    .close_and_append(v, next)
                    .expect("monotone state start");
                StateTransition::Opened { t_start: t, reason }
            }
            None => {
                let s = self.index.open_state_mut(v).expect("registered vertex");
                s.phase = kind;
                if let Some(c) = content {
                    c.install(s);
                }
                StateTransition::Updated { t }
            }
        }
    }

    fn plan_entities(&self, r: &Interaction) -> Result<EntityPlan, EngineError> {
        let entities = r.entities.as_deref().unwrap_or_default();
        let src_state = self.index.timeline(&r.src).and_then(|tl| tl.open_state());
        let dst_state = self.index.timeline(&r.dst).and_then(|tl| tl.open_state());
        let mut seen = HashSet::new();
        let mut plan = EntityPlan {
            newborn: Vec::new(),
            moved: Vec::new(),
        };
        for e in entities {
            if !seen.insert(e) {
                return Err(EngineError::DuplicateEntity(e.clone()));
            }
            let not_at_src = || EngineError::EntityNotAtSource {
                entity: e.clone(),
                vertex: r.src.clone(),
            };
            match self.index.entity_path(e) {
                None if r.replicate => return Err(not_at_src()),
                None => plan.newborn.push(e.clone()),
                Some(path) => {
                    if !src_state.is_some_and(|s| s.entities.contains(e)) {
                        return Err(not_at_src());
                    }
                    let hop = path
                        .arrival_into(&r.src, r.t, Flank::Post)
                        .map(|i| &path.hops[i])
                        .ok_or_else(not_at_src)?;
                    let key = ProvKey {
                        origin: hop.from.clone(),
                        birth: hop.t,
                        via_replication: hop.replicated,
                    };
                    plan.moved.push((e.clone(), key));
                }
            }
            if dst_state.is_some_and(|s| s.entities.contains(e)) {
                return Err(EngineError::EntityAlreadyAt {
                    entity: e.clone(),
                    vertex: r.dst.clone(),
                });
            }
        }
        Ok(plan)
    }

    /// Applies one interaction. On error the index is left untouched.
    pub fn apply(&mut self, r: &Interaction) -> Result<Transitions, EngineError> {
        let config = *self.config();
        r.check(config.data_class)?;
        self.check_time(r.t)?;
        let plan = match config.data_class {
            DataClass::Liquid => None,
            DataClass::Discrete => Some(self.plan_entities(r)?),
        };
        let seq = r.seq.unwrap_or(self.next_seq);
        self.next_seq = self.next_seq.max(seq + 1);
        self.last_t = Some(r.t);
        self.index.set_origin(r.t);

        let mut out = Transitions::new();
        self.prepare(&r.src, r.t, &mut out);
        self.prepare(&r.dst, r.t, &mut out);
        self.index.count_interaction(&r.src, &r.dst);

        let src_state = self.index.open_state(&r.src);
        let mut src_content = Content::of(src_state);
        let flow = match &plan {
            None => {
                let a = attribute_outflow(
                    &src_state.prov,
                    src_state.buffer,
                    r.q,
                    config.attribution,
                    config.float_tolerance,
                )?;
                let minted = mint_birth(&r.src, r.t, a.deficit(r.q, config.float_tolerance))
                    .map_or(0.0, |m| m.q);
                if !r.replicate {
                    src_content.buffer = a.remaining.values().sum();
                    src_content.prov = a.remaining;
                    src_content.dust += a.dust;
                }
                Outflow {
                    q: r.q,
                    minted,
                    consumed: a.consumed,
                }
            }
            Some(plan) => {
                let mut consumed = ProvMap::new();
                for (e, key) in &plan.moved {
                    *consumed.entry(key.clone()).or_insert(0.0) += 1.0;
                    if !r.replicate {
                        src_content.entities.remove(e);
                        let left = src_content.prov.get_mut(key).expect("entity key in prov");
                        *left -= 1.0;
                        if *left < 0.5 {
                            src_content.prov.remove(key);
                        }
                    }
                }
                src_content.buffer = src_content.entities.len() as f64;
                Outflow {
                    q: r.q,
                    minted: plan.newborn.len() as f64,
                    consumed,
                }
            }
        };
        let src_content = (!r.replicate).then_some(src_content);
        let t = self.transition(&r.src, r.t, PhaseKind::Depleting, src_content);
        out.push((r.src.clone(), t));

        let dst_state = self.index.open_state(&r.dst);
        let mut dst_content = Content::of(dst_state);
        let key = ProvKey {
            origin: r.src.clone(),
            birth: r.t,
            via_replication: r.replicate,
        };
        *dst_content.prov.entry(key).or_insert(0.0) += r.q;
        match &plan {
            None => dst_content.buffer += r.q,
            Some(plan) => {
                dst_content.entities.extend(
                    plan.newborn
                        .iter()
                        .chain(plan.moved.iter().map(|(e, _)| e))
                        .cloned(),
                );
                dst_content.buffer = dst_content.entities.len() as f64;
            }
        }
        let t = self.transition(&r.dst, r.t, PhaseKind::Accumulating, Some(dst_content));
        out.push((r.dst.clone(), t));

        let flow_key = |peer: &VertexId| FlowKey {
            peer: peer.clone(),
            t: r.t,
            replicated: r.replicate,
        };
        self.index
            .open_state_mut(&r.src)
            .expect("registered vertex")
            .outflows
            .entry(flow_key(&r.dst))
            .or_default()
            .absorb(&flow);
        *self
            .index
            .open_state_mut(&r.dst)
            .expect("registered vertex")
            .inflows
            .entry(flow_key(&r.src))
            .or_insert(0.0) += r.q;

        if let Some(plan) = plan {
            let hop = Hop {
                from: r.src.clone(),
                to: r.dst.clone(),
                t: r.t,
                seq,
                replicated: r.replicate,
            };
            for e in plan.newborn {
                self.index.insert_entity_path(
                    e,
                    EntityPath {
                        birth_vertex: r.src.clone(),
                        birth_t: r.t,
                        hops: vec![hop.clone()],
                    },
                );
            }
            for (e, _) in plan.moved {
                self.index
                    .entity_path_mut(&e)
                    .expect("known entity")
                    .hops
                    .push(hop.clone());
            }
        }
        Ok(out)
    }

    /// Forces a state boundary at `v` without an interaction. An epoch at the
    /// instant the open state starts is attached to that state instead.
    pub fn mark_epoch(
        &mut self,
        v: &VertexId,
        t: Timestamp,
        label: &str,
    ) -> Result<Transitions, EngineError> {
        self.check_time(t)?;
        self.last_t = Some(t);
        self.index.set_origin(t);
        let mut out = Transitions::new();
        self.prepare(v, t, &mut out);
        let cur = self.index.open_state(v);
        let split = t > cur.t_start
            || (self.config().boundary == BoundaryPolicy::PerInteraction
                && cur.phase != PhaseKind::Idle);
        if split {
            let mut next = cur.successor(t);
            next.epochs.push(label.to_string());
            self.index
                .close_and_append(v, next)
                .expect("monotone state start");
            out.push((
                v.clone(),
                StateTransition::Opened {
                    t_start: t,
                    reason: BoundaryReason::Epoch,
                },
            ));
        } else {
            self.index
                .open_state_mut(v)
                .expect("registered vertex")
                .epochs
                .push(label.to_string());
            out.push((v.clone(), StateTransition::Updated { t }));
        }
        Ok(out)
    }
}

/// Builds an index from a whole log.
pub fn build_index<I>(records: I, config: TinConfig) -> Result<TemporalProvenanceIndex, EngineError>
where
    I: IntoIterator,
    I::Item: Borrow<LogRecord>,
{
    let mut engine = Engine::new(config)?;
    for r in records {
        engine.apply_record(r.borrow())?;
    }
    Ok(engine.finish())
}

/// Builds an index from interactions only.
pub fn build_from_interactions<I>(
    log: I,
    config: TinConfig,
) -> Result<TemporalProvenanceIndex, EngineError>
where
    I: IntoIterator,
    I::Item: Borrow<Interaction>,
{
    let mut engine = Engine::new(config)?;
    for r in log {
        engine.apply(r.borrow())?;
    }
    Ok(engine.finish())
}

// ---------------------------------------------------------------------------
// Invariant audit
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditIssue {
    pub vertex: VertexId,
    pub t_start: Timestamp,
    pub problem: String,
}

/// Checks tiling, non-negativity, provenance sums and mass conservation at
/// every state of every vertex. Returns an empty list when all hold.
pub fn audit(index: &TemporalProvenanceIndex) -> Vec<AuditIssue> {
    let config = index.config();
    let tol = config.float_tolerance;
    let discrete = config.data_class == DataClass::Discrete;
    let zero_length_ok = config.boundary == BoundaryPolicy::PerInteraction;
    let mut issues = Vec::new();
    for v in index.vertices() {
        let states: Vec<_> = index.states(v).collect();
        let mut running = 0.0;
        let mut throughput = 0.0;
        let mut prev_dust = 0.0;
        for (i, s) in states.iter().enumerate() {
            let mut issue = |problem: String| {
                issues.push(AuditIssue {
                    vertex: v.clone(),
                    t_start: s.t_start,
                    problem,
                })
            };
            match (s.t_end, states.get(i + 1)) {
                (None, None) => {}
                (Some(end), Some(next)) if end == next.t_start => {
                    if end < s.t_start || (end == s.t_start && !zero_length_ok) {
                        issue(format!("state ends at {end}, before or at its start"));
                    }
                }
                _ => issue("states do not tile time".into()),
            }
            if s.buffer < -tol {
                issue(format!("negative buffer {}", s.buffer));
            }
            if let Some((k, q)) = s.prov.iter().find(|(_, q)| **q <= 0.0) {
                issue(format!("non-positive entry {q} for {}", k.origin));
            }
            let scale = s.buffer.abs().max(1.0);
            if (s.prov_total() - s.buffer).abs() > tol * scale {
                issue(format!(
                    "provenance sums to {}, buffer is {}",
                    s.prov_total(),
                    s.buffer
                ));
            }
            if discrete && s.entities.len() as f64 != s.buffer {
                issue(format!(
                    "{} entities, buffer {}",
                    s.entities.len(),
                    s.buffer
                ));
            }
            let inflow: f64 = s.inflows.values().sum();
            let outflow: f64 = s
                .outflows
                .iter()
                .filter(|(k, _)| !k.replicated)
                .map(|(_, f)| f.q - f.minted)
                .sum();
            throughput += inflow + outflow;
            running += inflow - outflow - (s.dust - prev_dust);
            prev_dust = s.dust;
            if (running - s.buffer).abs() > tol * throughput.max(1.0) {
                issue(format!(
                    "flows imply buffer {running}, state holds {}",
                    s.buffer
                ));
            }
        }
    }
    issues
}
