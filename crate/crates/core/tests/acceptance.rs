//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tinprov::engine::{audit, build_index, Engine};
use tinprov::index::{Flank, TemporalProvenanceIndex};
use tinprov::model::{ts, AttributionPolicy, BoundaryPolicy, LogRecord, TinConfig, VertexId};
use tinprov::query::{
    q1_backward, q2_forward, q3_temporal_lineage, q4_flow_lineage, q5_versioning, Depth, Horizon,
    Query, Tracer,
};
use tinprov::verify::{
    compare_answers, instants, random_queries, sweep_queries, verify_log, with_large_stack,
    VerifyOptions,
};
use tinprov::workload::{
    alternating, financial_random, flink_fig1, metro, strip_entities, windowed, Fig1Variant,
    FinancialSpec,
};

const BATTERY_LOGS: usize = 100;
const BATTERY_QUERIES: usize = 1000;
const BATTERY_MIN_INTERACTIONS: f64 = 10.0;
const BATTERY_MAX_INTERACTIONS: f64 = 3_000.0;
const DEFAULT_SEED: u64 = 20_261_016;

type Check = Result<String, String>;

fn v(name: &str) -> VertexId {
    VertexId::from(name)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("{what} took {elapsed:.2?}, limit {limit:?}")
    })
}

/// Running tally for the conservation criterion, fed by every workload.
#[derive(Default)]
struct Invariants {
    indexes: usize,
    states: usize,
    issues: Vec<String>,
}

impl Invariants {
    fn audit(&mut self, label: &str, index: &TemporalProvenanceIndex) {
        self.indexes += 1;
        self.states += index.total_state_count();
        self.issues.extend(
            audit(index)
                .into_iter()
                .map(|i| format!("{label}: {} at {}: {}", i.vertex, i.t_start, i.problem)),
        );
    }

    fn residual(&mut self, label: &str, residual: f64, mass: f64) {
        if residual.abs() > 1e-9 * mass.max(1.0) {
            self.issues.push(format!(
                "{label}: conservation residual {residual} on mass {mass}"
            ));
        }
    }
}

// ---------------------------------------------------------------------------
// Random payment logs shared by the battery, persistence and policy checks
// ---------------------------------------------------------------------------

struct BatteryCase {
    seed: u64,
    spec: FinancialSpec,
    config: TinConfig,
}

fn battery_case(base: u64, i: usize) -> BatteryCase {
    let seed = base.wrapping_add(i as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vertices = rng.gen_range(2..=50);
    let interactions = rng
        .gen_range(BATTERY_MIN_INTERACTIONS.ln()..=BATTERY_MAX_INTERACTIONS.ln())
        .exp()
        .round() as usize;
    let attribution = *[
        AttributionPolicy::Proportional,
        AttributionPolicy::Fifo,
        AttributionPolicy::Lifo,
    ]
    .choose(&mut rng)
    .expect("non-empty");
    let replicate_rate = if rng.gen_bool(0.25) { 0.1 } else { 0.0 };
    BatteryCase {
        seed,
        spec: FinancialSpec {
            seed: rng.gen(),
            vertices,
            interactions,
            min_amount: 1.0,
            max_amount: 1000.0,
            replicate_rate,
        },
        config: TinConfig::liquid(attribution),
    }
}

impl BatteryCase {
    fn log(&self) -> Vec<LogRecord> {
        financial_random(&self.spec)
            .into_iter()
            .map(LogRecord::from)
            .collect()
    }

    fn describe(&self) -> String {
        format!(
            "seed {} ({} vertices, {} interactions, {:?}, replicate {})",
            self.seed,
            self.spec.vertices,
            self.spec.interactions,
            self.config.attribution,
            self.spec.replicate_rate
        )
    }
}

fn battery_queries(index: &TemporalProvenanceIndex, log: &[LogRecord], seed: u64) -> Vec<Query> {
    let vertices: Vec<VertexId> = index.vertices().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_queries(&mut rng, &vertices, &instants(log), BATTERY_QUERIES)
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

fn fig1_reproduction(inv: &mut Invariants) -> Check {
    let start = Instant::now();
    let log = flink_fig1(Fig1Variant::Expanded);
    let index = build_index(&log, TinConfig::default()).map_err(|e| e.to_string())?;
    let w1 = v("W1");
    let states = index.state_count(&w1);
    let s = index
        .state_at(&w1, ts(3.5), Flank::Post)
        .ok_or("no W1 state at 3.5")?;
    let entries = s.prov_entries();
    let prov: Vec<(&str, f64, f64)> = entries
        .iter()
        .map(|e| (e.origin.as_str(), e.birth_t.value(), e.q))
        .collect();
    let elapsed = start.elapsed();
    inv.audit("fig1 expanded", &index);
    ensure(states == 3, || {
        format!("W1 has {states} states, expected 3")
    })?;
    ensure(s.buffer == 2000.0, || {
        format!("B(W1, 3.5) = {}, expected 2000", s.buffer)
    })?;
    ensure(
        prov == [("M1", 3.0, 450.0), ("M2", 3.0, 775.0), ("M3", 3.0, 775.0)],
        || format!("prov(W1, 3.5) = {prov:?}"),
    )?;
    within(elapsed, Duration::from_secs(1), "ingest and lookup")?;
    Ok(format!(
        "W1: 3 states, B=2000, prov M1:450 M2:775 M3:775 ({elapsed:.2?})"
    ))
}

fn worked_examples(inv: &mut Invariants) -> Check {
    let mut notes = Vec::new();
    for variant in [Fig1Variant::Aggregate, Fig1Variant::Expanded] {
        let index =
            build_index(flink_fig1(variant), TinConfig::default()).map_err(|e| e.to_string())?;
        inv.audit(&format!("fig1 {variant:?}"), &index);
        let mut slowest = Duration::ZERO;
        let mut timed = |f: &mut dyn FnMut() -> Result<(), String>| -> Result<(), String> {
            let start = Instant::now();
            f()?;
            let elapsed = start.elapsed();
            slowest = slowest.max(elapsed);
            within(elapsed, Duration::from_secs(1), "query")
        };
        let mappers = [("M1", 3.0, 450.0), ("M2", 3.0, 775.0), ("M3", 3.0, 775.0)];
        timed(&mut || {
            let a = q1_backward(
                &index,
                &v("W1"),
                ts(3.5),
                Depth::limited(1).unwrap(),
                Flank::Post,
            );
            let got: Vec<_> = a
                .entries
                .iter()
                .map(|e| (e.origin.as_str(), e.t.value(), e.q))
                .collect();
            ensure(got == mappers, || format!("{variant:?} q1: {got:?}"))
        })?;
        timed(&mut || {
            let a = q2_forward(&index, &v("K1"), ts(1.0), Depth::Unlimited);
            let chain: Vec<_> = a
                .deliveries
                .iter()
                .map(|d| (d.from.as_str(), d.to.as_str(), d.q_from_source))
                .collect();
            let expected = [
                ("K1", "S1", 1500.0),
                ("S1", "M1", 900.0),
                ("M1", "W1", 450.0),
                ("W1", "Sink", 450.0),
            ];
            ensure(chain == expected, || format!("{variant:?} q2: {chain:?}"))
        })?;
        timed(&mut || {
            let a = q3_temporal_lineage(&index, &v("W1"), ts(2.0), ts(3.0))
                .map_err(|e| e.to_string())?;
            let got: Vec<_> = a
                .entries
                .iter()
                .map(|e| (e.origin.as_str(), e.t.value(), e.q))
                .collect();
            ensure(got == mappers, || format!("{variant:?} q3: {got:?}"))
        })?;
        timed(&mut || {
            let q = q4_flow_lineage(
                &index,
                &v("K1"),
                &v("W1"),
                &v("M1"),
                Horizon::new(ts(0.0), ts(4.0)),
            )
            .map_err(|e| e.to_string())?;
            ensure(q == 450.0, || format!("{variant:?} q4 = {q}"))
        })?;
        timed(&mut || {
            let d = q5_versioning(&index, &v("W1"), ts(3.0), ts(4.0)).map_err(|e| e.to_string())?;
            let removed: Vec<_> = d
                .removed
                .iter()
                .map(|e| (e.origin.as_str(), e.birth_t.value(), e.q))
                .collect();
            ensure(
                d.buffer_before == 2000.0
                    && d.buffer_after == 0.0
                    && d.added.is_empty()
                    && d.changed.is_empty()
                    && removed == mappers,
                || format!("{variant:?} q5: {d:?}"),
            )
        })?;
        notes.push(format!("{variant:?} slowest {slowest:.2?}"));
    }
    Ok(format!(
        "q1 level 1, q2 chain, q3 at t=3, q4 = 450, q5 to B=0 ({})",
        notes.join(", ")
    ))
}

fn oracle_equivalence(inv: &mut Invariants, base: u64) -> Check {
    let start = Instant::now();
    let mut queries = 0;
    let mut largest = 0;
    let mut failures = Vec::new();
    for i in 0..BATTERY_LOGS {
        let case = battery_case(base, i);
        let log = case.log();
        largest = largest.max(log.len());
        let opts = VerifyOptions {
            queries: BATTERY_QUERIES,
            seed: case.seed,
            corrupt_snapshot: false,
        };
        let report = verify_log(&log, case.config, &opts)
            .map_err(|e| format!("{}: {e}", case.describe()))?;
        let index = build_index(&log, case.config).map_err(|e| e.to_string())?;
        inv.audit(&case.describe(), &index);
        inv.residual(&case.describe(), report.conservation_residual, report.mass);
        queries += report.queries;
        if !report.passed() {
            failures.push(format!("{}: {}", case.describe(), report.to_json()));
        }
    }
    let elapsed = start.elapsed();
    ensure(failures.is_empty(), || {
        format!(
            "{} of {BATTERY_LOGS} logs disagree; first: {}",
            failures.len(),
            failures[0]
        )
    })?;
    within(elapsed, Duration::from_secs(300), "battery")?;
    Ok(format!(
        "{BATTERY_LOGS} logs (seeds {base}..{}, up to {largest} interactions), {queries} queries incl. state sweep, \
         all within 1e-9 relative ({elapsed:.1?})",
        base + BATTERY_LOGS as u64 - 1
    ))
}

fn compression_scaling(inv: &mut Invariants) -> Check {
    let w_vertex = v("W");
    let mut rows = Vec::new();
    for windows in [10usize, 100] {
        for events in [1_000usize, 100_000] {
            let start = Instant::now();
            let mut engine = Engine::new(TinConfig::default()).map_err(|e| e.to_string())?;
            for r in windowed(windows, events) {
                engine.apply_record(&r).map_err(|e| e.to_string())?;
            }
            let index = engine.finish();
            let elapsed = start.elapsed();
            inv.audit(&format!("windowed {windows}x{events}"), &index);
            let states = index.state_count(&w_vertex);
            let touches = index.timeline(&w_vertex).map_or(0, |t| t.interactions());
            let per_window_ratio =
                (touches as f64 / windows as f64) / (states as f64 / windows as f64);
            ensure(states <= 3 * windows + 1, || {
                format!("w={windows} n={events}: {states} states > 3w+1")
            })?;
            ensure(per_window_ratio >= events as f64 / 4.0, || {
                format!("w={windows} n={events}: ratio {per_window_ratio} < n/4")
            })?;
            if windows == 100 && events == 100_000 {
                within(elapsed, Duration::from_secs(30), "largest windowed ingest")?;
            }
            rows.push(format!("w={windows} n={events}: {states} states, ratio {per_window_ratio:.1} ({elapsed:.2?})"));
        }
    }
    Ok(rows.join("; "))
}

fn compression_failure(inv: &mut Invariants) -> Check {
    let steps = 1000;
    let log = alternating(steps);
    let index = build_index(&log, TinConfig::default()).map_err(|e| e.to_string())?;
    inv.audit("alternating", &index);
    let x = index
        .stats()
        .vertices
        .into_iter()
        .find(|s| s.vertex.as_str() == "X")
        .ok_or("no X")?;
    let ratio = x.ratio.ok_or("no ratio")?;
    ensure((ratio - 1.0).abs() <= 0.01, || {
        format!("X ratio {ratio}, expected ~1")
    })?;
    let report = verify_log(
        &log,
        TinConfig::default(),
        &VerifyOptions {
            queries: BATTERY_QUERIES,
            seed: 5,
            corrupt_snapshot: false,
        },
    )
    .map_err(|e| e.to_string())?;
    inv.residual("alternating", report.conservation_residual, report.mass);
    ensure(report.passed(), || report.to_json().to_string())?;
    Ok(format!(
        "X: {} interactions in {} states (ratio {ratio:.4}); {} queries match the oracle",
        x.interactions, x.states, report.queries
    ))
}

fn conservation(inv: &Invariants) -> Check {
    ensure(inv.issues.is_empty(), || {
        format!("{} violations; first: {}", inv.issues.len(), inv.issues[0])
    })?;
    Ok(format!(
        "{} states across {} indexes",
        inv.states, inv.indexes
    ))
}

/// Every query shape over every vertex and event instant of a log.
fn exhaustive_queries(index: &TemporalProvenanceIndex, log: &[LogRecord]) -> Vec<Query> {
    let vertices: Vec<VertexId> = index.vertices().cloned().collect();
    let times = instants(log);
    let mut out = Vec::new();
    for vx in &vertices {
        for &t in &times {
            for depth in [
                Depth::limited(1).unwrap(),
                Depth::limited(2).unwrap(),
                Depth::Unlimited,
            ] {
                for flank in [Flank::Post, Flank::Pre] {
                    out.push(Query::Backward {
                        v: vx.clone(),
                        t,
                        depth,
                        flank,
                    });
                }
                out.push(Query::Forward {
                    s: vx.clone(),
                    t,
                    depth,
                });
            }
            for &t2 in times.iter().filter(|&&t2| t2 >= t) {
                out.push(Query::TemporalLineage {
                    v: vx.clone(),
                    t1: t,
                    t2,
                });
                if t2 > t {
                    out.push(Query::Versioning {
                        v: vx.clone(),
                        t1: t,
                        t2,
                    });
                }
            }
        }
        for d in &vertices {
            for via in &vertices {
                if vx != d && vx != via && d != via {
                    out.push(Query::FlowLineage {
                        s: vx.clone(),
                        d: d.clone(),
                        via: via.clone(),
                        horizon: Horizon::full(),
                    });
                }
            }
        }
    }
    out
}

fn discrete_liquid_agreement(inv: &mut Invariants) -> Check {
    let log = metro();
    let discrete = build_index(&log, TinConfig::discrete()).map_err(|e| e.to_string())?;
    let liquid_log = strip_entities(&log);
    let liquid = build_index(
        &liquid_log,
        TinConfig::liquid(AttributionPolicy::Proportional),
    )
    .map_err(|e| e.to_string())?;
    inv.audit("metro discrete", &discrete);
    inv.audit("metro liquid", &liquid);
    let queries = exhaustive_queries(&discrete, &log);
    let mut a = Tracer::new(&discrete);
    let mut b = Tracer::new(&liquid);
    for q in &queries {
        let (x, y) = (a.run(q).to_json(), b.run(q).to_json());
        ensure(x == y, || format!("{q}: entity paths {x} vs liquid {y}"))?;
    }
    let via_b = q4_flow_lineage(&discrete, &v("A"), &v("C"), &v("B"), Horizon::full())
        .map_err(|e| e.to_string())?;
    let report = verify_log(
        &log,
        TinConfig::discrete(),
        &VerifyOptions {
            queries: BATTERY_QUERIES,
            seed: 7,
            corrupt_snapshot: false,
        },
    )
    .map_err(|e| e.to_string())?;
    ensure(report.passed(), || {
        format!("discrete index vs oracle: {}", report.to_json())
    })?;
    Ok(format!(
        "{} queries identical; A->C via B = {via_b} passengers; discrete oracle agrees on {} more",
        queries.len(),
        report.queries
    ))
}

fn persistence_round_trip(base: u64) -> Check {
    let mut workloads: Vec<(String, Vec<LogRecord>, TinConfig)> = vec![
        (
            "fig1 expanded".into(),
            flink_fig1(Fig1Variant::Expanded),
            TinConfig::default(),
        ),
        (
            "fig1 aggregate".into(),
            flink_fig1(Fig1Variant::Aggregate),
            TinConfig::default(),
        ),
        (
            "windowed 10x1000".into(),
            windowed(10, 1000).collect(),
            TinConfig::default(),
        ),
        (
            "alternating".into(),
            alternating(1000),
            TinConfig::default(),
        ),
        ("metro".into(), metro(), TinConfig::discrete()),
    ];
    for i in 0..5 {
        let case = battery_case(base, i);
        workloads.push((case.describe(), case.log(), case.config));
    }
    let mut total = 0;
    for (label, log, config) in &workloads {
        let index = build_index(log, *config).map_err(|e| e.to_string())?;
        let text = index.snapshot_to_string();
        let reloaded =
            TemporalProvenanceIndex::load_from_str(&text).map_err(|e| format!("{label}: {e}"))?;
        ensure(reloaded.snapshot_to_string() == text, || {
            format!("{label}: re-snapshot differs")
        })?;
        let mut queries = sweep_queries(log);
        queries.extend(battery_queries(&index, log, 11));
        let mut a = Tracer::new(&index);
        let mut b = Tracer::new(&reloaded);
        for q in &queries {
            let (x, y) = (
                a.run(q).to_json().to_string(),
                b.run(q).to_json().to_string(),
            );
            ensure(x == y, || format!("{label}: {q}: {x} vs {y}"))?;
        }
        total += queries.len();
    }
    Ok(format!(
        "{} workloads, {total} answers byte-identical after reload",
        workloads.len()
    ))
}

fn boundary_transparency(base: u64) -> Check {
    let start = Instant::now();
    let mut total = 0;
    let mut inexact = 0;
    for i in 0..BATTERY_LOGS {
        let case = battery_case(base, i);
        let log = case.log();
        let phase = build_index(&log, case.config).map_err(|e| e.to_string())?;
        let per = build_index(
            &log,
            case.config.with_boundary(BoundaryPolicy::PerInteraction),
        )
        .map_err(|e| e.to_string())?;
        let queries = battery_queries(&phase, &log, case.seed ^ 0x9e37_79b9);
        let mut a = Tracer::new(&phase);
        let mut b = Tracer::new(&per);
        for q in &queries {
            let (x, y) = (a.run(q), b.run(q));
            if let Err(e) = compare_answers(&x, &y) {
                return Err(format!("{}: {q}: {e}", case.describe()));
            }
            if x.to_json() != y.to_json() {
                inexact += 1;
            }
        }
        total += queries.len();
    }
    Ok(format!(
        "{total} queries on {BATTERY_LOGS} logs agree ({} bit-identical, {inexact} within 1e-9 relative) ({:.1?})",
        total - inexact,
        start.elapsed()
    ))
}

fn main() {
    let base = std::env::var("TINPROV_ACCEPTANCE_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_SEED);
    let failed = with_large_stack(move || {
        let mut inv = Invariants::default();
        let mut failed = 0;
        let mut report = |name: &str, r: Check| match r {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        };
        report("1 fig1 reproduction", fig1_reproduction(&mut inv));
        report("2 worked query examples", worked_examples(&mut inv));
        report("3 oracle equivalence", oracle_equivalence(&mut inv, base));
        report("4 compression scaling", compression_scaling(&mut inv));
        report("5 compression failure mode", compression_failure(&mut inv));
        report(
            "7 discrete/liquid agreement",
            discrete_liquid_agreement(&mut inv),
        );
        report("8 persistence round trip", persistence_round_trip(base));
        report(
            "9 boundary-policy transparency",
            boundary_transparency(base),
        );
        report("6 conservation invariants", conservation(&inv));
        failed
    });
    if failed > 0 {
        std::process::exit(1);
    }
}
