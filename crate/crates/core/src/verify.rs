//! Index-versus-oracle equivalence checking.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::engine::{audit, build_index};
use crate::error::{EngineError, SnapshotError};
use crate::index::{Flank, TemporalProvenanceIndex};
use crate::model::{LogRecord, Timestamp, TinConfig, VertexId};
use crate::oracle::{replay, Oracle};
use crate::query::{Answer, Depth, Horizon, ProvenanceAnswer, Query, Tracer};

/// Largest log `verify` accepts.
pub const VERIFY_LIMIT: usize = 100_000;

/// Relative tolerance for float comparisons between index and oracle.
pub const RELATIVE_TOLERANCE: f64 = 1e-9;

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= RELATIVE_TOLERANCE * scale.max(1.0)
}

fn keyed_diff<K: Ord + fmt::Debug>(
    what: &str,
    a: &BTreeMap<K, f64>,
    b: &BTreeMap<K, f64>,
    scale: f64,
) -> Result<(), String> {
    for k in a.keys().chain(b.keys()) {
        let x = a.get(k).copied().unwrap_or(0.0);
        let y = b.get(k).copied().unwrap_or(0.0);
        if !close(x, y, scale) {
            return Err(format!("{what} {k:?}: {x} vs {y}"));
        }
    }
    Ok(())
}

fn provenance_terms(a: &ProvenanceAnswer) -> BTreeMap<(VertexId, Timestamp), f64> {
    a.entries
        .iter()
        .map(|e| ((e.origin.clone(), e.t), e.q))
        .collect()
}

/// Compares two answers: quantities within [`RELATIVE_TOLERANCE`] of the
/// answer's total mass (a missing entry counts as zero), structure exactly.
pub fn compare_answers(a: &Answer, b: &Answer) -> Result<(), String> {
    match (a, b) {
        (Answer::Provenance(x), Answer::Provenance(y)) => {
            let scale = x.total().abs().max(y.total().abs());
            keyed_diff("entry", &provenance_terms(x), &provenance_terms(y), scale)?;
            if (x.depth_reached, x.truncated) != (y.depth_reached, y.truncated) {
                return Err(format!(
                    "depth/truncation ({}, {}) vs ({}, {})",
                    x.depth_reached, x.truncated, y.depth_reached, y.truncated
                ));
            }
            Ok(())
        }
        (Answer::Forward(x), Answer::Forward(y)) => {
            let shares = |f: &crate::query::ForwardAnswer| -> BTreeMap<_, f64> {
                f.deliveries
                    .iter()
                    .map(|d| ((d.from.clone(), d.to.clone(), d.t), d.q_from_source))
                    .collect()
            };
            let (sx, sy) = (shares(x), shares(y));
            let scale = sx
                .values()
                .chain(sy.values())
                .fold(0.0f64, |m, q| m.max(*q));
            keyed_diff("delivery", &sx, &sy, scale)?;
            for (dx, dy) in x.deliveries.iter().filter_map(|dx| {
                y.deliveries
                    .iter()
                    .find(|dy| (&dy.from, &dy.to, dy.t) == (&dx.from, &dx.to, dx.t))
                    .map(|dy| (dx, dy))
            }) {
                if !close(dx.hop_total, dy.hop_total, dx.hop_total.max(dy.hop_total)) {
                    return Err(format!(
                        "hop total {}->{} at {}: {} vs {}",
                        dx.from, dx.to, dx.t, dx.hop_total, dy.hop_total
                    ));
                }
            }
            Ok(())
        }
        (Answer::Flow(x), Answer::Flow(y)) => {
            if close(*x, *y, x.abs().max(y.abs())) {
                Ok(())
            } else {
                Err(format!("flow {x} vs {y}"))
            }
        }
        (Answer::Delta(x), Answer::Delta(y)) => {
            let net = |d: &crate::query::ProvenanceDelta| {
                let mut m = BTreeMap::new();
                for e in &d.added {
                    *m.entry(e.key()).or_insert(0.0) += e.q;
                }
                for e in &d.removed {
                    *m.entry(e.key()).or_insert(0.0) -= e.q;
                }
                for c in &d.changed {
                    let key = crate::index::ProvKey {
                        origin: c.origin.clone(),
                        birth: c.birth_t,
                        via_replication: c.via_replication,
                    };
                    *m.entry(key).or_insert(0.0) += c.q_after - c.q_before;
                }
                m
            };
            let scale = [
                x.buffer_before,
                x.buffer_after,
                y.buffer_before,
                y.buffer_after,
            ]
            .into_iter()
            .fold(0.0f64, f64::max);
            keyed_diff("delta", &net(x), &net(y), scale)?;
            if !close(x.buffer_before, y.buffer_before, scale)
                || !close(x.buffer_after, y.buffer_after, scale)
            {
                return Err(format!(
                    "buffers {}->{} vs {}->{}",
                    x.buffer_before, x.buffer_after, y.buffer_before, y.buffer_after
                ));
            }
            Ok(())
        }
        (Answer::Rejected(x), Answer::Rejected(y)) if x == y => Ok(()),
        _ => Err("answers of different kinds".into()),
    }
}

// ---------------------------------------------------------------------------
// Random queries
// ---------------------------------------------------------------------------

/// Draws random queries over the given vertices and instants. Half of the
/// times are actual event instants so that boundaries are exercised.
pub fn random_queries(
    rng: &mut impl Rng,
    vertices: &[VertexId],
    instants: &[Timestamp],
    n: usize,
) -> Vec<Query> {
    if vertices.is_empty() {
        return Vec::new();
    }
    let t_max = instants.iter().max().map_or(1.0, |t| t.value() + 1.0);
    let time = |rng: &mut ChaCha8Rng| -> Timestamp {
        if !instants.is_empty() && rng.gen_bool(0.5) {
            *instants.choose(rng).expect("non-empty")
        } else {
            Timestamp::new(rng.gen_range(0.0..t_max)).expect("finite")
        }
    };
    let mut local = ChaCha8Rng::seed_from_u64(rng.gen());
    let rng = &mut local;
    let depth = |rng: &mut ChaCha8Rng| match rng.gen_range(0..4) {
        0 => Depth::Unlimited,
        n => Depth::limited(n).expect("positive"),
    };
    (0..n)
        .map(|_| {
            let v = vertices.choose(rng).expect("non-empty").clone();
            match rng.gen_range(0..5) {
                0 => Query::Backward {
                    v,
                    t: time(rng),
                    depth: depth(rng),
                    flank: if rng.gen_bool(0.5) {
                        Flank::Post
                    } else {
                        Flank::Pre
                    },
                },
                1 => Query::Forward {
                    s: v,
                    t: time(rng),
                    depth: depth(rng),
                },
                2 => {
                    let (a, b) = (time(rng), time(rng));
                    let (t1, t2) = if rng.gen_bool(0.9) {
                        (a.min(b), a.max(b))
                    } else {
                        (a, b)
                    };
                    Query::TemporalLineage { v, t1, t2 }
                }
                3 => {
                    let pick =
                        |rng: &mut ChaCha8Rng| vertices.choose(rng).expect("non-empty").clone();
                    let (d, via) = (pick(rng), pick(rng));
                    let horizon = if rng.gen_bool(0.5) {
                        Horizon::full()
                    } else {
                        let (a, b) = (time(rng), time(rng));
                        Horizon::new(a.min(b), a.max(b))
                    };
                    Query::FlowLineage {
                        s: v,
                        d,
                        via,
                        horizon,
                    }
                }
                _ => {
                    let (a, b) = (time(rng), time(rng));
                    let (t1, t2) = if rng.gen_bool(0.9) {
                        (a.min(b), a.max(b))
                    } else {
                        (a, b)
                    };
                    Query::Versioning { v, t1, t2 }
                }
            }
        })
        .collect()
}

/// Depth-one backward queries on both flanks of every instant at which a
/// vertex sends, receives or marks an epoch.
pub fn sweep_queries(records: &[LogRecord]) -> Vec<Query> {
    let mut touched = BTreeSet::new();
    for r in records {
        match r {
            LogRecord::Interaction(i) => {
                touched.insert((i.src.clone(), i.t));
                touched.insert((i.dst.clone(), i.t));
            }
            LogRecord::Epoch(e) => {
                touched.insert((e.vertex.clone(), e.t));
            }
        }
    }
    let one = Depth::limited(1).expect("positive");
    touched
        .into_iter()
        .flat_map(|(v, t)| {
            [Flank::Post, Flank::Pre].map(|flank| Query::Backward {
                v: v.clone(),
                t,
                depth: one,
                flank,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Verification run
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("log has {0} interactions; verification is limited to {VERIFY_LIMIT}")]
    Oversize(usize),
    #[error("index build failed: {0}")]
    Engine(#[from] EngineError),
    #[error("snapshot round trip failed: {0}")]
    Snapshot(#[from] SnapshotError),
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    pub queries: usize,
    pub seed: u64,
    /// Test mode: damage the snapshot before reloading it.
    pub corrupt_snapshot: bool,
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub query: Query,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub interactions: usize,
    pub states: usize,
    pub queries: usize,
    pub mismatches: Vec<Mismatch>,
    pub audit_issues: usize,
    /// Replayed `minted + copied − dust − held`.
    pub conservation_residual: f64,
    /// Total minted and copied quantity, the scale for the residual.
    pub mass: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
            && self.audit_issues == 0
            && self.conservation_residual.abs() <= RELATIVE_TOLERANCE * self.mass.max(1.0)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "passed": self.passed(),
            "interactions": self.interactions,
            "states": self.states,
            "queries": self.queries,
            "mismatches": self.mismatches.iter().take(20).map(|m| json!({
                "query": m.query.to_string(),
                "detail": m.detail,
            })).collect::<Vec<_>>(),
            "mismatch_count": self.mismatches.len(),
            "audit_issues": self.audit_issues,
            "conservation_residual": self.conservation_residual,
            "mass": self.mass,
        })
    }
}

/// Doubles the first provenance quantity of the last open state with
/// non-empty provenance. Used to prove the battery catches damage.
pub fn corrupt_snapshot(text: &str) -> String {
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let target = lines.iter().rposition(|l| {
        serde_json::from_str::<Value>(l).is_ok_and(|v| {
            v.get("t1").is_some_and(Value::is_null)
                && v["prov"].as_array().is_some_and(|p| !p.is_empty())
        })
    });
    if let Some(i) = target {
        let mut v: Value = serde_json::from_str(&lines[i]).expect("parsed above");
        let q: f64 = v["prov"][0][2]
            .as_str()
            .and_then(|s| s.parse().ok())
            .unwrap_or(1.0);
        v["prov"][0][2] = Value::String(format!("{}", q * 2.0 + 1.0));
        lines[i] = v.to_string();
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

/// Event instants of a log, deduplicated and sorted.
pub fn instants(records: &[LogRecord]) -> Vec<Timestamp> {
    let mut t: Vec<_> = records.iter().map(LogRecord::t).collect();
    t.dedup();
    t
}

/// Builds the index, round-trips it through a snapshot, replays the oracle,
/// and compares both on a state sweep plus `opts.queries` random queries.
pub fn verify_log(
    records: &[LogRecord],
    config: TinConfig,
    opts: &VerifyOptions,
) -> Result<VerifyReport, VerifyError> {
    let interactions = records
        .iter()
        .filter(|r| matches!(r, LogRecord::Interaction(_)))
        .count();
    if interactions > VERIFY_LIMIT {
        return Err(VerifyError::Oversize(interactions));
    }
    let built = build_index(records, config)?;
    let mut text = built.snapshot_to_string();
    if opts.corrupt_snapshot {
        text = corrupt_snapshot(&text);
    }
    let index = TemporalProvenanceIndex::load_from_str(&text)?;
    let timeline = replay(records, config)?;

    let vertices: Vec<VertexId> = index.vertices().cloned().collect();
    let instants = instants(records);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut queries = sweep_queries(records);
    queries.extend(random_queries(&mut rng, &vertices, &instants, opts.queries));

    let mut tracer = Tracer::new(&index);
    let mut oracle = Oracle::new(&timeline);
    let mut mismatches = Vec::new();
    for q in &queries {
        if let Err(detail) = compare_answers(&tracer.run(q), &oracle.run(q)) {
            mismatches.push(Mismatch {
                query: q.clone(),
                detail,
            });
        }
    }
    Ok(VerifyReport {
        interactions,
        states: index.total_state_count(),
        queries: queries.len(),
        mismatches,
        audit_issues: audit(&index).len(),
        conservation_residual: timeline.conservation_residual(),
        mass: timeline.total_minted() + timeline.total_copied(),
    })
}

/// Runs `f` on a thread with a large stack; deep provenance chains recurse
/// once per hop.
pub fn with_large_stack<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    std::thread::scope(|s| {
        std::thread::Builder::new()
            .stack_size(1 << 30)
            .spawn_scoped(s, f)
            .expect("spawn worker thread")
            .join()
            .unwrap_or_else(|e| std::panic::resume_unwind(e))
    })
}
