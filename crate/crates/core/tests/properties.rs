use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use tinprov::engine::{audit, build_index};
use tinprov::index::{Flank, ProvMap, TemporalProvenanceIndex, VertexState};
use tinprov::model::{
    parse_record, ts, AttributionPolicy, BoundaryPolicy, DataClass, EntityId, EpochMarker,
    InputFormat, Interaction, LogRecord, Timestamp, TinConfig, VertexId,
};
use tinprov::query::{
    apply_delta, q1_backward, q2_forward, q4_flow_lineage, q5_versioning, Depth, Horizon, Tracer,
};
use tinprov::validate::validate_log;
use tinprov::verify::{instants, sweep_queries, verify_log, with_large_stack, VerifyOptions};
use tinprov::workload::{
    alternating, financial_random, flink_fig1, metro, windowed, Fig1Variant, FinancialSpec,
};

const POLICIES: [AttributionPolicy; 3] = [
    AttributionPolicy::Proportional,
    AttributionPolicy::Fifo,
    AttributionPolicy::Lifo,
];

/// 64 cases unless `PROPTEST_CASES` says otherwise.
fn config() -> ProptestConfig {
    if std::env::var_os("PROPTEST_CASES").is_some() {
        ProptestConfig::default()
    } else {
        ProptestConfig::with_cases(64)
    }
}

fn name(i: usize) -> VertexId {
    VertexId::from(format!("v{i}"))
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * scale.abs().max(1.0)
}

// ---------------------------------------------------------------------------
// Log strategies
// ---------------------------------------------------------------------------

/// `(src, dst offset, time step, quantity in quarters, replicate)`.
type Step = (usize, usize, u8, u32, bool);

fn step(vertices: usize, replicate: bool) -> impl Strategy<Value = Step> {
    (
        0..vertices,
        1..vertices,
        prop_oneof![2 => Just(0u8), 3 => 1u8..4],
        1u32..400,
        proptest::bool::weighted(if replicate { 0.15 } else { 0.0 }),
    )
}

/// A liquid log over up to `max_vertices` vertices with ties, optional
/// replication and occasional epoch markers.
fn liquid_log(
    max_vertices: usize,
    max_len: usize,
    replicate: bool,
) -> impl Strategy<Value = Vec<LogRecord>> {
    (2..=max_vertices).prop_flat_map(move |n| {
        (
            prop::collection::vec(step(n, replicate), 1..max_len),
            prop::collection::vec((0..n, 0..max_len), 0..3),
        )
            .prop_map(move |(steps, epochs)| assemble(n, &steps, &epochs))
    })
}

fn assemble(n: usize, steps: &[Step], epochs: &[(usize, usize)]) -> Vec<LogRecord> {
    let mut t = 0.0;
    let mut log = Vec::new();
    for (i, &(src, off, dt, q, repl)) in steps.iter().enumerate() {
        t += f64::from(dt) * 0.5;
        for &(v, at) in epochs {
            if at == i {
                log.push(EpochMarker::new(name(v), t, "epoch").into());
            }
        }
        let mut r = Interaction::new(name(src), name((src + off) % n), t, f64::from(q) / 4.0);
        if repl {
            r = r.replicated();
        }
        log.push(r.into());
    }
    log
}

/// A log whose edges only go from lower to higher vertex numbers.
fn dag_log(max_vertices: usize, max_len: usize) -> impl Strategy<Value = (usize, Vec<LogRecord>)> {
    (3..=max_vertices).prop_flat_map(move |n| {
        prop::collection::vec((0..n - 1, 0..n, 0u8..3, 1u32..400), 1..max_len).prop_map(
            move |raw| {
                let mut t = 0.0;
                let log = raw
                    .into_iter()
                    .map(|(src, hop, dt, q)| {
                        t += f64::from(dt) * 0.5;
                        let dst = src + 1 + hop % (n - 1 - src);
                        Interaction::new(name(src), name(dst), t, f64::from(q) / 4.0).into()
                    })
                    .collect();
                (n, log)
            },
        )
    })
}

/// Source `v0`, middle vertices `v1..=k`, sink `v{k+1}`: flows go source to
/// middle, middle to sink, or source straight to sink.
fn fan_log(max_middle: usize, max_len: usize) -> impl Strategy<Value = (usize, Vec<LogRecord>)> {
    (1..=max_middle).prop_flat_map(move |k| {
        prop::collection::vec((0u8..3, 1..=k, 0u8..3, 1u32..400), 1..max_len).prop_map(move |raw| {
            let sink = k + 1;
            let mut t = 0.0;
            let log = raw
                .into_iter()
                .map(|(kind, m, dt, q)| {
                    t += f64::from(dt) * 0.5;
                    let (src, dst) = match kind {
                        0 => (0, m),
                        1 => (m, sink),
                        _ => (0, sink),
                    };
                    Interaction::new(name(src), name(dst), t, f64::from(q) / 4.0).into()
                })
                .collect();
            (k, log)
        })
    })
}

/// A tree fed from `v0`: each other vertex receives exactly once, from a
/// lower-numbered vertex, and only forwards part of what it received.
fn tree_log(max_vertices: usize) -> impl Strategy<Value = Vec<LogRecord>> {
    (2..=max_vertices).prop_flat_map(|n| {
        prop::collection::vec((any::<prop::sample::Index>(), 1u32..400, 1u32..=4), n - 1).prop_map(
            move |raw| {
                let mut held = vec![0.0f64; n];
                let mut log = Vec::new();
                for (i, (parent, q, frac)) in raw.into_iter().enumerate() {
                    let child = i + 1;
                    let parent = parent.index(child);
                    let t = child as f64;
                    let q = if parent == 0 {
                        f64::from(q)
                    } else {
                        held[parent] * f64::from(frac) / 8.0
                    };
                    if q <= 0.0 {
                        continue;
                    }
                    if parent != 0 {
                        held[parent] -= q;
                    }
                    held[child] = q;
                    log.push(Interaction::new(name(parent), name(child), t, q).into());
                }
                log
            },
        )
    })
}

/// A discrete log: each transfer moves some entities the sender holds plus
/// some fresh ones born at the sender.
fn discrete_log(max_vertices: usize, max_len: usize) -> impl Strategy<Value = Vec<LogRecord>> {
    (2..=max_vertices).prop_flat_map(move |n| {
        prop::collection::vec(
            (
                0..n,
                1..n,
                0u8..3,
                prop::collection::vec(any::<bool>(), 0..6),
                0usize..3,
            ),
            1..max_len,
        )
        .prop_map(move |raw| {
            let mut at: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
            let mut fresh = 0usize;
            let mut t = 0.0;
            let mut log = Vec::new();
            for (src, off, dt, picks, born) in raw {
                t += f64::from(dt) * 0.5;
                let dst = (src + off) % n;
                let mut moving: Vec<usize> = at[src]
                    .iter()
                    .zip(&picks)
                    .filter(|(_, &p)| p)
                    .map(|(&e, _)| e)
                    .collect();
                moving.extend(fresh..fresh + born);
                fresh += born;
                if moving.is_empty() {
                    continue;
                }
                for e in &moving {
                    at[src].remove(e);
                    at[dst].insert(*e);
                }
                let r = Interaction::new(name(src), name(dst), t, moving.len() as f64)
                    .with_entities(moving.iter().map(|e| format!("e{e}")));
                log.push(r.into());
            }
            log
        })
    })
}

fn interaction() -> impl Strategy<Value = (Interaction, DataClass)> {
    let id = "[A-Za-z][A-Za-z0-9_.-]{0,8}";
    (
        id,
        id,
        0.0f64..1e7,
        prop_oneof![
            (1e-6f64..1e9).prop_map(|q| (q, None)),
            prop::collection::btree_set("[a-z][0-9]{0,3}", 1..6)
                .prop_map(|es| (es.len() as f64, Some(es.into_iter().collect::<Vec<_>>()))),
        ],
        any::<bool>(),
    )
        .prop_filter("no self loops", |(s, d, ..)| s != d)
        .prop_map(|(s, d, t, (q, entities), repl)| {
            let mut r = Interaction::new(s.as_str(), d.as_str(), t, q);
            if repl {
                r = r.replicated();
            }
            let class = match entities {
                Some(es) => {
                    r = r.with_entities(es);
                    DataClass::Discrete
                }
                None => DataClass::Liquid,
            };
            (r, class)
        })
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

fn probe_times(log: &[LogRecord]) -> Vec<Timestamp> {
    let at = instants(log);
    let mut out = at.clone();
    out.extend(
        at.windows(2)
            .map(|w| ts((w[0].value() + w[1].value()) / 2.0)),
    );
    if let Some(last) = at.last() {
        out.push(ts(last.value() + 1.0));
    }
    out
}

fn last_time(log: &[LogRecord]) -> Timestamp {
    log.last().map_or(ts(0.0), LogRecord::t)
}

fn visible(index: &TemporalProvenanceIndex, v: &VertexId, t: Timestamp) -> (f64, ProvMap) {
    index
        .state_at(v, t, Flank::Post)
        .map_or((0.0, ProvMap::new()), |s| (s.buffer, s.prov.clone()))
}

fn state_ids<'a>(
    states: impl IntoIterator<Item = &'a VertexState>,
) -> BTreeSet<*const VertexState> {
    states.into_iter().map(|s| s as *const _).collect()
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(config())]

    #[test]
    fn jsonl_round_trip((r, class) in interaction()) {
        let record = LogRecord::from(r);
        let back = parse_record(&record.to_jsonl(), InputFormat::Jsonl, class).unwrap();
        prop_assert_eq!(back, record);
    }

    #[test]
    fn csv_round_trip((r, _) in interaction()) {
        let r = Interaction { entities: None, replicate: false, ..r };
        let back = parse_record(&r.to_csv(), InputFormat::Csv, DataClass::Liquid).unwrap();
        prop_assert_eq!(back, LogRecord::from(r));
    }

    #[test]
    fn epoch_round_trip(v in "[a-z]{1,6}", t in 0.0f64..1e6, label in "[a-z ]{0,10}") {
        let record = LogRecord::from(EpochMarker::new(v.as_str(), t, label));
        let back = parse_record(&record.to_jsonl(), InputFormat::Jsonl, DataClass::Liquid).unwrap();
        prop_assert_eq!(back, record);
    }

    #[test]
    fn random_payment_logs_validate(seed in any::<u64>(), vertices in 2usize..20, interactions in 0usize..300) {
        let spec = FinancialSpec { seed, vertices, interactions, replicate_rate: 0.2, ..FinancialSpec::default() };
        let log: Vec<LogRecord> = financial_random(&spec).into_iter().map(LogRecord::from).collect();
        let report = validate_log(&log);
        prop_assert!(report.is_empty(), "{:?}", report);
        prop_assert!(build_index(&log, TinConfig::default()).is_ok());
    }
}

#[test]
fn fixed_workloads_validate() {
    let logs = [
        flink_fig1(Fig1Variant::Aggregate),
        flink_fig1(Fig1Variant::Expanded),
        metro(),
        windowed(5, 200).collect(),
        alternating(100),
    ];
    for log in &logs {
        let report = validate_log(log);
        assert!(report.is_empty(), "{report:?}");
    }
}

// ---------------------------------------------------------------------------
// state engine and index
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(config())]

    #[test]
    fn states_conserve_mass(log in liquid_log(6, 40, true), policy in prop::sample::select(&POLICIES[..])) {
        for boundary in [BoundaryPolicy::PhaseChange, BoundaryPolicy::PerInteraction] {
            let index = build_index(&log, TinConfig::liquid(policy).with_boundary(boundary)).unwrap();
            let issues = audit(&index);
            prop_assert!(issues.is_empty(), "{:?}", issues);
        }
    }

    #[test]
    fn states_tile_time(log in liquid_log(6, 40, true)) {
        for boundary in [BoundaryPolicy::PhaseChange, BoundaryPolicy::PerInteraction, BoundaryPolicy::TimeBucket { delta: 1.0 }] {
            let index = build_index(&log, TinConfig::default().with_boundary(boundary)).unwrap();
            for v in index.vertices() {
                let states: Vec<&VertexState> = index.states(v).collect();
                for pair in states.windows(2) {
                    prop_assert_eq!(pair[0].t_end, Some(pair[1].t_start));
                }
                for s in &states {
                    if let Some(end) = s.t_end {
                        if boundary == BoundaryPolicy::PhaseChange {
                            prop_assert!(s.t_start < end, "{} has an empty state at {}", v, s.t_start);
                        } else {
                            prop_assert!(s.t_start <= end);
                        }
                    }
                }
                prop_assert_eq!(states.iter().filter(|s| s.is_open()).count(), 1);
                prop_assert!(states.last().unwrap().is_open());
                for t in probe_times(&log) {
                    if let Some(s) = index.state_at(v, t, Flank::Post) {
                        prop_assert!(s.covers(t));
                    } else {
                        prop_assert!(t < states[0].t_start);
                    }
                }
            }
        }
    }

    #[test]
    fn range_lookups_compose(log in liquid_log(5, 30, false), cuts in prop::collection::vec(0.0f64..25.0, 3)) {
        let index = build_index(&log, TinConfig::default()).unwrap();
        let mut cuts = cuts;
        cuts.sort_by(f64::total_cmp);
        let (a, b, c) = (ts(cuts[0]), ts(cuts[1]), ts(cuts[2]));
        for v in index.vertices() {
            let mut left = state_ids(index.states_in(v, a, b).unwrap());
            left.extend(state_ids(index.states_in(v, b, c).unwrap()));
            prop_assert_eq!(left, state_ids(index.states_in(v, a, c).unwrap()));
        }
    }

    #[test]
    fn boundary_policy_is_invisible(log in liquid_log(6, 40, true), policy in prop::sample::select(&POLICIES[..])) {
        let base = TinConfig::liquid(policy);
        let phase = build_index(&log, base).unwrap();
        for boundary in [BoundaryPolicy::PerInteraction, BoundaryPolicy::TimeBucket { delta: 1.5 }] {
            let other = build_index(&log, base.with_boundary(boundary)).unwrap();
            prop_assert!(phase.total_state_count() <= other.total_state_count() || boundary != BoundaryPolicy::PerInteraction);
            for v in phase.vertices() {
                for t in probe_times(&log) {
                    prop_assert_eq!(visible(&phase, v, t), visible(&other, v, t), "{} at {} under {:?}", v, t, boundary);
                }
            }
        }
    }

    #[test]
    fn single_origin_policies_coincide(log in tree_log(8)) {
        let indexes: Vec<TemporalProvenanceIndex> =
            POLICIES.iter().map(|&p| build_index(&log, TinConfig::liquid(p)).unwrap()).collect();
        let end = last_time(&log);
        for v in indexes[0].vertices() {
            let answers: Vec<_> = indexes
                .iter()
                .map(|ix| {
                    let outflows: Vec<_> = ix.states(v).map(|s| s.outflows.clone()).collect();
                    (visible(ix, v, end), outflows, q1_backward(ix, v, end, Depth::Unlimited, Flank::Post))
                })
                .collect();
            prop_assert_eq!(&answers[0], &answers[1]);
            prop_assert_eq!(&answers[0], &answers[2]);
        }
    }

    #[test]
    fn snapshot_reload_is_exact(log in liquid_log(6, 40, true), policy in prop::sample::select(&POLICIES[..])) {
        let index = build_index(&log, TinConfig::liquid(policy)).unwrap();
        let text = index.snapshot_to_string();
        let back = TemporalProvenanceIndex::load_from_str(&text).unwrap();
        prop_assert_eq!(back.snapshot_to_string(), text);
        let (mut a, mut b) = (Tracer::new(&index), Tracer::new(&back));
        for q in sweep_queries(&log) {
            prop_assert_eq!(a.run(&q).to_json().to_string(), b.run(&q).to_json().to_string());
        }
    }

    #[test]
    fn entities_occupy_one_vertex(log in discrete_log(5, 30)) {
        let index = build_index(&log, TinConfig::discrete()).unwrap();
        prop_assert!(audit(&index).is_empty());
        for t in probe_times(&log) {
            let mut seen: BTreeMap<EntityId, VertexId> = BTreeMap::new();
            for v in index.vertices() {
                if let Some(s) = index.state_at(v, t, Flank::Post) {
                    prop_assert_eq!(s.buffer, s.entities.len() as f64);
                    for e in &s.entities {
                        prop_assert!(seen.insert(e.clone(), v.clone()).is_none(), "{} held twice at {}", e, t);
                    }
                }
            }
        }
    }

    #[test]
    fn entity_paths_stay_within_depth_bound(log in discrete_log(5, 30)) {
        let index = build_index(&log, TinConfig::discrete()).unwrap();
        let carried: f64 = log
            .iter()
            .map(|r| match r {
                LogRecord::Interaction(i) => i.q,
                LogRecord::Epoch(_) => 0.0,
            })
            .sum();
        let entities = index.entity_paths().count();
        let deepest = index.entity_paths().map(|(_, p)| p.hops.len()).max().unwrap_or(0);
        let stored: usize = index.entity_paths().map(|(_, p)| p.hops.len()).sum();
        prop_assert_eq!(stored as f64, carried);
        prop_assert!(stored <= deepest * entities);
        for (e, path) in index.entity_paths() {
            for pair in path.hops.windows(2) {
                prop_assert_eq!(&pair[0].to, &pair[1].from, "{} jumps", e);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// queries
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(config())]

    #[test]
    fn index_agrees_with_oracle(
        log in liquid_log(6, 40, true),
        policy in prop::sample::select(&POLICIES[..]),
        seed in any::<u64>(),
    ) {
        let opts = VerifyOptions { queries: 150, seed, corrupt_snapshot: false };
        let report = with_large_stack(|| verify_log(&log, TinConfig::liquid(policy), &opts)).unwrap();
        prop_assert!(report.passed(), "{}", report.to_json());
    }

    #[test]
    fn discrete_index_agrees_with_oracle(log in discrete_log(5, 30), seed in any::<u64>()) {
        let opts = VerifyOptions { queries: 150, seed, corrupt_snapshot: false };
        let report = with_large_stack(|| verify_log(&log, TinConfig::discrete(), &opts)).unwrap();
        prop_assert!(report.passed(), "{}", report.to_json());
    }

    #[test]
    fn depth_preserves_mass(log in liquid_log(6, 40, true), policy in prop::sample::select(&POLICIES[..])) {
        let index = build_index(&log, TinConfig::liquid(policy)).unwrap();
        let mut tracer = Tracer::new(&index);
        for v in index.vertices() {
            for t in instants(&log) {
                let buffer = visible(&index, v, t).0;
                for depth in [1, 2, 4].map(|d| Depth::limited(d).unwrap()).into_iter().chain([Depth::Unlimited]) {
                    let total = tracer.q1_backward(v, t, depth, Flank::Post).total();
                    prop_assert!(close(total, buffer, buffer), "{} at {} depth {:?}: {} vs {}", v, t, depth, total, buffer);
                }
            }
        }
    }

    #[test]
    fn versioning_composes(log in liquid_log(5, 30, true), picks in prop::collection::vec(any::<prop::sample::Index>(), 3)) {
        let index = build_index(&log, TinConfig::default()).unwrap();
        let times = probe_times(&log);
        let mut chosen: Vec<Timestamp> = picks.iter().map(|i| times[i.index(times.len())]).collect();
        chosen.sort();
        chosen.dedup();
        prop_assume!(chosen.len() == 3);
        let (t0, t1, t2) = (chosen[0], chosen[1], chosen[2]);
        for v in index.vertices() {
            let start = visible(&index, v, t0).1;
            let d01 = q5_versioning(&index, v, t0, t1).unwrap();
            let d12 = q5_versioning(&index, v, t1, t2).unwrap();
            let d02 = q5_versioning(&index, v, t0, t2).unwrap();
            prop_assert_eq!(apply_delta(&apply_delta(&start, &d01), &d12), apply_delta(&start, &d02));
            prop_assert_eq!(d01.buffer_before, d02.buffer_before);
            prop_assert_eq!(d12.buffer_after, d02.buffer_after);
            prop_assert!(q5_versioning(&index, v, t0, t0).is_err());
        }
    }

    #[test]
    fn forward_and_backward_agree(
        (n, log) in dag_log(6, 40),
        policy in prop::sample::select(&POLICIES[..]),
    ) {
        let index = build_index(&log, TinConfig::liquid(policy)).unwrap();
        let (s, d) = (name(0), name(n - 1));
        let forward = q2_forward(&index, &s, ts(0.0), Depth::Unlimited).delivered_to(&d);
        let backward = q1_backward(&index, &d, last_time(&log), Depth::Unlimited, Flank::Post).total_from(&s);
        prop_assert!(close(forward, backward, forward), "{} vs {}", forward, backward);
    }

    #[test]
    fn flow_lineage_splits_over_last_hops((k, log) in fan_log(4, 40)) {
        let index = build_index(&log, TinConfig::default()).unwrap();
        let (s, d) = (name(0), name(k + 1));
        let direct: f64 = log
            .iter()
            .filter_map(|r| match r {
                LogRecord::Interaction(i) if i.src == s && i.dst == d => Some(i.q),
                _ => None,
            })
            .sum();
        let via: f64 = (1..=k)
            .map(|m| q4_flow_lineage(&index, &s, &d, &name(m), Horizon::full()).unwrap())
            .sum();
        let held = q1_backward(&index, &d, last_time(&log), Depth::Unlimited, Flank::Post).total_from(&s);
        prop_assert!(close(direct + via, held, held), "{} + {} vs {}", direct, via, held);
    }
}
