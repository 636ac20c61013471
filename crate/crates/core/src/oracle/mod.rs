//! Brute-force reference replay.
//!
//! Replays the raw log one event at a time, keeping a full content snapshot
//! per touched vertex per event and the consumed provenance of every flow.
//! It never builds states, so its answers do not depend on the boundary
//! policy. Queries are evaluated directly from those definitions over this
//! data, without the index.

mod queries;

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use crate::error::EngineError;
use crate::model::{
    AttributionPolicy, DataClass, EntityId, Interaction, LogRecord, Timestamp, TinConfig, VertexId,
};

/// `(last hop, arrival time, via replication)`.
pub type OracleKey = (VertexId, Timestamp, bool);
pub type Multiset = BTreeMap<OracleKey, f64>;

/// Exact content of a vertex after one event.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Snapshot {
    pub buffer: f64,
    pub prov: Multiset,
    pub entities: BTreeSet<EntityId>,
}

/// One history row: the content right after the event at position `pos`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub t: Timestamp,
    pub pos: usize,
    pub content: Snapshot,
}

/// Aggregate of all flows `src -> dst` at one instant with one replicate flag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlowRecord {
    pub q: f64,
    pub minted: f64,
    pub consumed: Multiset,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleHop {
    pub from: VertexId,
    pub to: VertexId,
    pub t: Timestamp,
    pub replicated: bool,
}

/// Full event-resolution history of a log.
#[derive(Clone, Debug)]
pub struct ReplayTimeline {
    config: TinConfig,
    histories: BTreeMap<VertexId, Vec<HistoryEntry>>,
    current: HashMap<VertexId, Snapshot>,
    flows: HashMap<(VertexId, VertexId, Timestamp, bool), FlowRecord>,
    log: Vec<Interaction>,
    hops: BTreeMap<EntityId, Vec<OracleHop>>,
    positions: HashMap<EntityId, HashSet<VertexId>>,
    registered: BTreeSet<VertexId>,
    last_t: Option<Timestamp>,
    minted: f64,
    copied: f64,
    dust: f64,
}

/// Consumes `out` from `prov` (total `buffer`) under `policy`, returning the
/// consumed multiset, the rest, the amount taken and the dust dropped.
fn charge(
    prov: &Multiset,
    buffer: f64,
    out: f64,
    policy: AttributionPolicy,
    tol: f64,
) -> (Multiset, Multiset, f64, f64) {
    let taken = if out < buffer { out } else { buffer };
    let mut consumed = Multiset::new();
    let mut rest = Multiset::new();
    if policy == AttributionPolicy::Proportional {
        for (k, &q) in prov {
            if taken >= buffer {
                consumed.insert(k.clone(), q);
            } else {
                let part = taken * q / buffer;
                if part > 0.0 {
                    consumed.insert(k.clone(), part);
                }
                rest.insert(k.clone(), q - part);
            }
        }
    } else {
        let mut order: Vec<(&OracleKey, f64)> = prov.iter().map(|(k, q)| (k, *q)).collect();
        order.sort_by(|(a, _), (b, _)| {
            let t = a.1.cmp(&b.1);
            let t = if policy == AttributionPolicy::Lifo {
                t.reverse()
            } else {
                t
            };
            t.then(a.0.cmp(&b.0)).then(a.2.cmp(&b.2))
        });
        let mut need = taken;
        for (k, q) in order {
            let part = if need <= 0.0 {
                0.0
            } else if q <= need {
                q
            } else {
                need
            };
            need -= part;
            if part > 0.0 {
                consumed.insert(k.clone(), part);
            }
            if q > part {
                rest.insert(k.clone(), q - part);
            }
        }
    }
    let mut dust = 0.0;
    rest.retain(|_, q| {
        let keep = *q > tol;
        if !keep {
            dust += *q;
        }
        keep
    });
    (consumed, rest, taken, dust)
}

impl ReplayTimeline {
    pub fn new(config: TinConfig) -> Self {
        Self {
            config,
            histories: BTreeMap::new(),
            current: HashMap::new(),
            flows: HashMap::new(),
            log: Vec::new(),
            hops: BTreeMap::new(),
            positions: HashMap::new(),
            registered: BTreeSet::new(),
            last_t: None,
            minted: 0.0,
            copied: 0.0,
            dust: 0.0,
        }
    }

    pub fn config(&self) -> &TinConfig {
        &self.config
    }

    pub fn history(&self, v: &VertexId) -> &[HistoryEntry] {
        self.histories.get(v).map_or(&[], Vec::as_slice)
    }

    pub fn vertices(&self) -> impl Iterator<Item = &VertexId> + '_ {
        self.registered.iter()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.log
    }

    pub fn flow(
        &self,
        src: &VertexId,
        dst: &VertexId,
        t: Timestamp,
        replicated: bool,
    ) -> Option<&FlowRecord> {
        self.flows.get(&(src.clone(), dst.clone(), t, replicated))
    }

    pub(crate) fn all_flows(
        &self,
    ) -> impl Iterator<Item = (&(VertexId, VertexId, Timestamp, bool), &FlowRecord)> {
        self.flows.iter()
    }

    pub fn entity_hops(&self) -> impl Iterator<Item = (&EntityId, &Vec<OracleHop>)> + '_ {
        self.hops.iter()
    }

    /// Content of `v` visible at `t`: after every event at `t` (post flank)
    /// or before all of them (pre flank). Empty before the first event.
    pub fn content_at(&self, v: &VertexId, t: Timestamp, pre: bool) -> Option<&Snapshot> {
        let h = self.histories.get(v)?;
        let n = h.partition_point(|e| if pre { e.t < t } else { e.t <= t });
        n.checked_sub(1).map(|i| &h[i].content)
    }

    fn check_time(&self, t: Timestamp) -> Result<(), EngineError> {
        match self.last_t {
            Some(last) if t < last => Err(EngineError::TimeRegression { last, found: t }),
            _ => Ok(()),
        }
    }

    pub fn apply_record(&mut self, record: &LogRecord) -> Result<(), EngineError> {
        match record {
            LogRecord::Interaction(r) => self.apply(r),
            LogRecord::Epoch(e) => {
                self.check_time(e.t)?;
                self.last_t = Some(e.t);
                self.registered.insert(e.vertex.clone());
                Ok(())
            }
        }
    }

    pub fn apply(&mut self, r: &Interaction) -> Result<(), EngineError> {
        r.check(self.config.data_class)?;
        self.check_time(r.t)?;
        let discrete = self.config.data_class == DataClass::Discrete;
        if discrete {
            self.check_entities(r)?;
        }
        self.last_t = Some(r.t);
        let pos = self.log.len();
        self.log.push(r.clone());
        self.registered.insert(r.src.clone());
        self.registered.insert(r.dst.clone());
        let tol = self.config.float_tolerance;

        let mut sender = self.current.get(&r.src).cloned().unwrap_or_default();
        let (consumed, minted) = if discrete {
            self.move_entities(r, &mut sender)
        } else {
            let (consumed, rest, taken, dust) = charge(
                &sender.prov,
                sender.buffer,
                r.q,
                self.config.attribution,
                tol,
            );
            let deficit = r.q - taken;
            let minted = if deficit > tol { deficit } else { 0.0 };
            if r.replicate {
                self.copied += taken;
            } else {
                sender.buffer = rest.values().sum();
                sender.prov = rest;
                self.dust += dust;
            }
            (consumed, minted)
        };
        self.minted += minted;

        let mut receiver = self.current.get(&r.dst).cloned().unwrap_or_default();
        *receiver
            .prov
            .entry((r.src.clone(), r.t, r.replicate))
            .or_insert(0.0) += r.q;
        if discrete {
            receiver
                .entities
                .extend(r.entities.iter().flatten().cloned());
            receiver.buffer = receiver.entities.len() as f64;
        } else {
            receiver.buffer += r.q;
        }

        let flow = self
            .flows
            .entry((r.src.clone(), r.dst.clone(), r.t, r.replicate))
            .or_default();
        flow.q += r.q;
        flow.minted += minted;
        for (k, q) in consumed {
            *flow.consumed.entry(k).or_insert(0.0) += q;
        }

        for (v, content) in [(&r.src, sender), (&r.dst, receiver)] {
            self.histories
                .entry(v.clone())
                .or_default()
                .push(HistoryEntry {
                    t: r.t,
                    pos,
                    content: content.clone(),
                });
            self.current.insert(v.clone(), content);
        }
        Ok(())
    }

    fn check_entities(&self, r: &Interaction) -> Result<(), EngineError> {
        let mut seen = HashSet::new();
        for e in r.entities.iter().flatten() {
            if !seen.insert(e) {
                return Err(EngineError::DuplicateEntity(e.clone()));
            }
            let held = self.positions.get(e);
            let ok = match held {
                None => !r.replicate,
                Some(at) => at.contains(&r.src),
            };
            if !ok {
                return Err(EngineError::EntityNotAtSource {
                    entity: e.clone(),
                    vertex: r.src.clone(),
                });
            }
            if held.is_some_and(|at| at.contains(&r.dst)) {
                return Err(EngineError::EntityAlreadyAt {
                    entity: e.clone(),
                    vertex: r.dst.clone(),
                });
            }
        }
        Ok(())
    }

    /// Latest hop that brought `e` into `v` at or before `t`.
    fn last_arrival(&self, e: &EntityId, v: &VertexId) -> Option<&OracleHop> {
        self.hops.get(e)?.iter().rev().find(|h| &h.to == v)
    }

    fn move_entities(&mut self, r: &Interaction, sender: &mut Snapshot) -> (Multiset, f64) {
        let mut consumed = Multiset::new();
        let mut minted = 0.0;
        for e in r.entities.iter().flatten() {
            match self.last_arrival(e, &r.src).cloned() {
                None => minted += 1.0,
                Some(h) => {
                    let key = (h.from, h.t, h.replicated);
                    *consumed.entry(key.clone()).or_insert(0.0) += 1.0;
                    if !r.replicate {
                        sender.entities.remove(e);
                        if let Some(n) = sender.prov.get_mut(&key) {
                            *n -= 1.0;
                            if *n == 0.0 {
                                sender.prov.remove(&key);
                            }
                        }
                    }
                }
            }
            let at = self.positions.entry(e.clone()).or_default();
            if !r.replicate {
                at.remove(&r.src);
            }
            at.insert(r.dst.clone());
            self.hops.entry(e.clone()).or_default().push(OracleHop {
                from: r.src.clone(),
                to: r.dst.clone(),
                t: r.t,
                replicated: r.replicate,
            });
        }
        sender.buffer = sender.entities.len() as f64;
        (consumed, minted)
    }

    /// `Σ minted + Σ copied − Σ dust − Σ final buffers`; zero up to rounding
    /// when mass is conserved.
    pub fn conservation_residual(&self) -> f64 {
        let held: f64 = self.current.values().map(|c| c.buffer).sum();
        self.minted + self.copied - self.dust - held
    }

    pub fn total_minted(&self) -> f64 {
        self.minted
    }

    pub fn total_copied(&self) -> f64 {
        self.copied
    }
}

/// Replays a whole log.
pub fn replay<I>(records: I, config: TinConfig) -> Result<ReplayTimeline, EngineError>
where
    I: IntoIterator,
    I::Item: Borrow<LogRecord>,
{
    config.validate().map_err(EngineError::Config)?;
    let mut tl = ReplayTimeline::new(config);
    for r in records {
        tl.apply_record(r.borrow())?;
    }
    Ok(tl)
}

pub use queries::Oracle;
