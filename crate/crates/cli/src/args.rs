use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tinprov::index::Flank;
use tinprov::model::{AttributionPolicy, BoundaryPolicy, DataClass, InputFormat, TinConfig};
use tinprov::query::Depth;
use tinprov::workload::Fig1Variant;

#[derive(Debug, Parser)]
#[command(
    name = "tinprov",
    version,
    about = "Temporal provenance over interaction logs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build an index from a log and write its snapshot.
    Ingest(IngestArgs),
    /// Answer one provenance query against a snapshot.
    Query(QueryArgs),
    /// Write a synthetic workload as JSONL.
    Generate(GenerateArgs),
    /// Check the index against the replay oracle on a log.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Csv,
}

impl From<FormatArg> for InputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Jsonl => InputFormat::Jsonl,
            FormatArg::Csv => InputFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ClassArg {
    Liquid,
    Discrete,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Proportional,
    Fifo,
    Lifo,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BoundaryArg {
    PhaseChange,
    PerInteraction,
    TimeBucket,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Input format; inferred from the file extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long = "data-class", value_enum, default_value = "liquid")]
    pub data_class: ClassArg,
    /// Attribution policy for liquid outflows.
    #[arg(long, value_enum, default_value = "proportional")]
    pub policy: PolicyArg,
    #[arg(long, value_enum, default_value = "phase-change")]
    pub boundary: BoundaryArg,
    /// Bucket width for `--boundary time-bucket`.
    #[arg(long = "bucket-delta")]
    pub bucket_delta: Option<f64>,
    #[arg(long, env = "TINPROV_TOLERANCE", default_value_t = 1e-9)]
    pub tolerance: f64,
}

impl ConfigArgs {
    pub fn config(&self) -> Result<TinConfig, String> {
        let boundary = match (self.boundary, self.bucket_delta) {
            (BoundaryArg::PhaseChange, None) => BoundaryPolicy::PhaseChange,
            (BoundaryArg::PerInteraction, None) => BoundaryPolicy::PerInteraction,
            (BoundaryArg::TimeBucket, Some(delta)) => BoundaryPolicy::TimeBucket { delta },
            (BoundaryArg::TimeBucket, None) => {
                return Err("--boundary time-bucket needs --bucket-delta".into())
            }
            (_, Some(_)) => {
                return Err("--bucket-delta only applies to --boundary time-bucket".into())
            }
        };
        let config = TinConfig {
            data_class: match self.data_class {
                ClassArg::Liquid => DataClass::Liquid,
                ClassArg::Discrete => DataClass::Discrete,
            },
            attribution: match self.policy {
                PolicyArg::Proportional => AttributionPolicy::Proportional,
                PolicyArg::Fifo => AttributionPolicy::Fifo,
                PolicyArg::Lifo => AttributionPolicy::Lifo,
            },
            boundary,
            float_tolerance: self.tolerance,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn input_format(&self, path: &std::path::Path) -> InputFormat {
        match self.format {
            Some(f) => f.into(),
            None if path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("csv")) =>
            {
                InputFormat::Csv
            }
            None => InputFormat::Jsonl,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Interaction log; `-` reads standard input.
    pub input: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Snapshot path; defaults to the input path with `.snapshot.jsonl`.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Also report per-vertex statistics for these vertices.
    #[arg(long = "vertex")]
    pub vertices: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QueryKind {
    Q1,
    Q2,
    Q3,
    Q4,
    Q5,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FlankArg {
    Post,
    Pre,
}

impl From<FlankArg> for Flank {
    fn from(f: FlankArg) -> Self {
        match f {
            FlankArg::Post => Flank::Post,
            FlankArg::Pre => Flank::Pre,
        }
    }
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    pub snapshot: PathBuf,
    #[arg(long = "type", value_enum)]
    pub kind: QueryKind,
    #[arg(long)]
    pub vertex: Option<String>,
    #[arg(long)]
    pub t: Option<f64>,
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long)]
    pub t2: Option<f64>,
    /// Tracing depth: a positive count or `inf`. Defaults to 1 for q1 and
    /// `inf` for q2.
    #[arg(long)]
    pub depth: Option<Depth>,
    #[arg(long, value_enum, default_value = "post")]
    pub flank: FlankArg,
    #[arg(long)]
    pub via: Option<String>,
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub dest: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WorkloadKind {
    FlinkFig1,
    Metro,
    FinancialRandom,
    Windowed,
    Alternating,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Aggregate,
    Expanded,
}

impl From<VariantArg> for Fig1Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Aggregate => Fig1Variant::Aggregate,
            VariantArg::Expanded => Fig1Variant::Expanded,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub kind: WorkloadKind,
    /// Output path; standard output when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "aggregate")]
    pub variant: VariantArg,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub vertices: usize,
    #[arg(long, default_value_t = 10_000)]
    pub interactions: usize,
    #[arg(long = "min-amount", default_value_t = 1.0)]
    pub min_amount: f64,
    #[arg(long = "max-amount", default_value_t = 1000.0)]
    pub max_amount: f64,
    #[arg(long = "replicate-rate", default_value_t = 0.0)]
    pub replicate_rate: f64,
    #[arg(long, default_value_t = 10)]
    pub windows: usize,
    #[arg(long, default_value_t = 1000)]
    pub events: usize,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    pub input: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Random queries on top of the per-state sweep.
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Damage the snapshot before reloading it (self-test of the checker).
    #[arg(long = "corrupt-snapshot", hide = true)]
    pub corrupt_snapshot: bool,
}
