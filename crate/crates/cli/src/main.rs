mod args;

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use serde_json::{json, Value};
use tinprov::engine::Engine;
use tinprov::index::TemporalProvenanceIndex;
use tinprov::model::{
    is_csv_header, parse_record, InputFormat, LogRecord, Timestamp, TinConfig, VertexId,
};
use tinprov::query::{Depth, Horizon, Query, Tracer};
use tinprov::validate::LogValidator;
use tinprov::verify::{verify_log, with_large_stack, VerifyError, VerifyOptions, VERIFY_LIMIT};
use tinprov::workload::{FinancialSpec, WorkloadSpec};

use args::{
    Cli, Command, GenerateArgs, IngestArgs, QueryArgs, QueryKind, VerifyArgs, WorkloadKind,
};

enum Failure {
    /// Bad flags, unreadable or invalid input: exit 2.
    Usage(String),
    /// A line-numbered list of rejected records: exit 2.
    Invalid(Vec<Value>),
    /// Input outside what the command will process: exit 3.
    Refused(String),
    /// The index disagreed with the oracle: exit 1.
    Mismatch,
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = with_large_stack(move || match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Query(a) => query(a),
        Command::Generate(a) => generate(a),
        Command::Verify(a) => verify(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Invalid(report)) => {
            for line in &report {
                eprintln!("{line}");
            }
            eprintln!("error: {} invalid record(s)", report.len());
            ExitCode::from(2)
        }
        Err(Failure::Refused(msg)) => {
            eprintln!("refused: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Mismatch) => ExitCode::from(1),
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn open_input(path: &Path) -> Result<Box<dyn BufRead>, Failure> {
    if path.as_os_str() == "-" {
        return Ok(Box::new(io::stdin().lock()));
    }
    let f = File::open(path)
        .map_err(|e| Failure::Usage(format!("cannot open {}: {e}", path.display())))?;
    Ok(Box::new(BufReader::new(f)))
}

fn create_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Streams parsed records with their 1-based line numbers. Blank lines and a
/// leading CSV header are skipped.
fn records(
    reader: Box<dyn BufRead>,
    format: InputFormat,
    config: &TinConfig,
) -> impl Iterator<Item = (usize, Result<LogRecord, Value>)> {
    let class = config.data_class;
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let n = i + 1;
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some((n, Err(json!({"line": n, "error": e.to_string()})))),
        };
        if line.trim().is_empty() || (n == 1 && format == InputFormat::Csv && is_csv_header(&line))
        {
            return None;
        }
        Some((
            n,
            parse_record(&line, format, class)
                .map_err(|e| json!({"line": n, "error": e.to_string()})),
        ))
    })
}

fn ingest(a: IngestArgs) -> CmdResult {
    let config = a.config.config().map_err(Failure::Usage)?;
    let format = a.config.input_format(&a.input);
    let output = match (&a.output, a.input.as_os_str() == "-") {
        (Some(p), _) => p.clone(),
        (None, false) => {
            let mut p = a.input.clone().into_os_string();
            p.push(".snapshot.jsonl");
            PathBuf::from(p)
        }
        (None, true) => {
            return Err(Failure::Usage(
                "--output is required when reading stdin".into(),
            ))
        }
    };

    let mut engine = Engine::new(config).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut validator = LogValidator::new();
    let mut problems = Vec::new();
    for (line, record) in records(open_input(&a.input)?, format, &config) {
        let record = match record {
            Ok(r) => r,
            Err(v) => {
                problems.push(v);
                continue;
            }
        };
        let violations = validator.push(&record);
        if !violations.is_empty() {
            problems.extend(
                violations
                    .iter()
                    .map(|v| json!({"line": line, "error": v.to_string()})),
            );
            continue;
        }
        if problems.is_empty() {
            if let Err(e) = engine.apply_record(&record) {
                problems.push(json!({"line": line, "error": e.to_string()}));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Failure::Invalid(problems));
    }

    let index = engine.finish();
    let mut out = BufWriter::new(
        File::create(&output).with_context(|| format!("cannot create {}", output.display()))?,
    );
    index.snapshot(&mut out).context("writing snapshot")?;
    out.flush()?;

    let stats = index.stats();
    let ratio = |r: Option<f64>| r.map_or(json!("n/a"), |r| json!(r));
    let mut report = json!({
        "snapshot": output.display().to_string(),
        "raw_interactions": stats.raw_interactions,
        "states": stats.states,
        "ratio": ratio(stats.ratio),
    });
    if !a.vertices.is_empty() {
        let per_vertex: Vec<Value> = a
            .vertices
            .iter()
            .map(
                |name| match stats.vertices.iter().find(|v| v.vertex.as_str() == name) {
                    Some(v) => json!({
                        "vertex": name,
                        "interactions": v.interactions,
                        "states": v.states,
                        "ratio": ratio(v.ratio),
                    }),
                    None => json!({"vertex": name, "interactions": 0, "states": 0, "ratio": "n/a"}),
                },
            )
            .collect();
        report["vertices"] = Value::Array(per_vertex);
    }
    println!("{report}");
    Ok(())
}

fn load_snapshot(path: &Path) -> Result<TemporalProvenanceIndex, Failure> {
    TemporalProvenanceIndex::load(open_input(path)?)
        .map_err(|e| Failure::Usage(format!("invalid snapshot {}: {e}", path.display())))
}

fn build_query(a: &QueryArgs) -> Result<Query, String> {
    fn need<T: Clone>(v: &Option<T>, flag: &str, kind: QueryKind) -> Result<T, String> {
        v.clone()
            .ok_or_else(|| format!("--{flag} is required for --type {kind:?}").to_lowercase())
    }
    let vertex = |flag: &str, v: &Option<String>| -> Result<VertexId, String> {
        VertexId::new(need(v, flag, a.kind)?).ok_or_else(|| format!("--{flag} must be non-empty"))
    };
    let time = |flag: &str, v: Option<f64>| -> Result<Timestamp, String> {
        let t = need(&v, flag, a.kind)?;
        Timestamp::new(t)
            .ok_or_else(|| format!("--{flag} must be finite and non-negative, got {t}"))
    };
    Ok(match a.kind {
        QueryKind::Q1 => Query::Backward {
            v: vertex("vertex", &a.vertex)?,
            t: time("t", a.t)?,
            depth: a.depth.unwrap_or(Depth::limited(1).expect("positive")),
            flank: a.flank.into(),
        },
        QueryKind::Q2 => Query::Forward {
            s: vertex("source", &a.source.clone().or_else(|| a.vertex.clone()))?,
            t: time("t", a.t)?,
            depth: a.depth.unwrap_or(Depth::Unlimited),
        },
        QueryKind::Q3 => Query::TemporalLineage {
            v: vertex("vertex", &a.vertex)?,
            t1: time("t1", a.t1)?,
            t2: time("t2", a.t2)?,
        },
        QueryKind::Q4 => {
            let full = Horizon::full();
            let start = a.t1.map_or(Ok(full.start), |t| time("t1", Some(t)))?;
            let end = a.t2.map_or(Ok(full.end), |t| time("t2", Some(t)))?;
            Query::FlowLineage {
                s: vertex("source", &a.source)?,
                d: vertex("dest", &a.dest)?,
                via: vertex("via", &a.via)?,
                horizon: Horizon::new(start, end),
            }
        }
        QueryKind::Q5 => Query::Versioning {
            v: vertex("vertex", &a.vertex)?,
            t1: time("t1", a.t1)?,
            t2: time("t2", a.t2)?,
        },
    })
}

fn query(a: QueryArgs) -> CmdResult {
    let q = build_query(&a).map_err(Failure::Usage)?;
    let index = load_snapshot(&a.snapshot)?;
    let answer = Tracer::new(&index).run(&q);
    if let tinprov::query::Answer::Rejected(e) = answer {
        return Err(Failure::Usage(format!("{q}: {e}")));
    }
    println!("{}", answer.to_json());
    Ok(())
}

fn generate(a: GenerateArgs) -> CmdResult {
    let spec = match a.kind {
        WorkloadKind::FlinkFig1 => WorkloadSpec::FlinkFig1(a.variant.into()),
        WorkloadKind::Metro => WorkloadSpec::Metro,
        WorkloadKind::FinancialRandom => {
            let fin = FinancialSpec {
                seed: a.seed,
                vertices: a.vertices,
                interactions: a.interactions,
                min_amount: a.min_amount,
                max_amount: a.max_amount,
                replicate_rate: a.replicate_rate,
            };
            fin.validate().map_err(Failure::Usage)?;
            WorkloadSpec::FinancialRandom(fin)
        }
        WorkloadKind::Windowed => WorkloadSpec::Windowed {
            windows: a.windows,
            events: a.events,
        },
        WorkloadKind::Alternating => WorkloadSpec::Alternating { steps: a.steps },
    };
    let mut out = create_output(a.output.as_deref())?;
    for r in spec.records() {
        writeln!(out, "{}", r.to_jsonl())?;
    }
    out.flush()?;
    Ok(())
}

fn verify(a: VerifyArgs) -> CmdResult {
    let config = a.config.config().map_err(Failure::Usage)?;
    let format = a.config.input_format(&a.input);
    let mut log = Vec::new();
    let mut interactions = 0usize;
    let mut problems = Vec::new();
    for (_, record) in records(open_input(&a.input)?, format, &config) {
        match record {
            Ok(r) => {
                if matches!(r, LogRecord::Interaction(_)) {
                    interactions += 1;
                    if interactions > VERIFY_LIMIT {
                        return Err(Failure::Refused(format!(
                            "log exceeds {VERIFY_LIMIT} interactions; the oracle replay is not meant for it"
                        )));
                    }
                }
                log.push(r);
            }
            Err(v) => problems.push(v),
        }
    }
    if !problems.is_empty() {
        return Err(Failure::Invalid(problems));
    }
    let opts = VerifyOptions {
        queries: a.queries,
        seed: a.seed,
        corrupt_snapshot: a.corrupt_snapshot,
    };
    let report = match verify_log(&log, config, &opts) {
        Ok(r) => r,
        Err(VerifyError::Oversize(n)) => {
            return Err(Failure::Refused(format!("log has {n} interactions")))
        }
        Err(VerifyError::Engine(e)) => {
            return Err(Failure::Invalid(vec![json!({"error": e.to_string()})]))
        }
        Err(e @ VerifyError::Snapshot(_)) => return Err(Failure::Runtime(e.into())),
    };
    println!("{}", report.to_json());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Mismatch)
    }
}
