//! Deterministic workload generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{EpochMarker, Interaction, LogRecord, TinConfig};

/// The ten aggregate interactions of the Flink word-count pipeline:
/// three Kafka sources, two splitters, three mappers, a window and a sink.
pub const FIG1_AGGREGATE: [(&str, &str, f64, f64); 10] = [
    ("K1", "S1", 1.0, 1500.0),
    ("K2", "S2", 1.0, 1200.0),
    ("K3", "S2", 1.0, 1300.0),
    ("S1", "M1", 2.0, 900.0),
    ("S2", "M2", 2.0, 600.0),
    ("S2", "M3", 2.0, 775.0),
    ("M1", "W1", 3.0, 450.0),
    ("M2", "W1", 3.0, 775.0),
    ("M3", "W1", 3.0, 775.0),
    ("W1", "Sink", 4.0, 2000.0),
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fig1Variant {
    /// Exactly the ten aggregate interactions.
    #[default]
    Aggregate,
    /// The mapper-to-window traffic as 2000 unit events.
    Expanded,
}

impl std::str::FromStr for Fig1Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aggregate" => Ok(Fig1Variant::Aggregate),
            "expanded" => Ok(Fig1Variant::Expanded),
            _ => Err(format!(
                "unknown variant {s} (expected aggregate or expanded)"
            )),
        }
    }
}

/// The Flink pipeline log. The expanded variant delivers the 450/775/775
/// mapper outputs as unit events, interleaved round-robin, all at `t = 3`.
pub fn flink_fig1(variant: Fig1Variant) -> Vec<LogRecord> {
    let mut log: Vec<LogRecord> = FIG1_AGGREGATE[..6]
        .iter()
        .map(|&(s, d, t, q)| Interaction::new(s, d, t, q).into())
        .collect();
    match variant {
        Fig1Variant::Aggregate => {
            log.extend(
                FIG1_AGGREGATE[6..9]
                    .iter()
                    .map(|&(s, d, t, q)| LogRecord::from(Interaction::new(s, d, t, q))),
            );
        }
        Fig1Variant::Expanded => {
            let mut left = [("M1", 450u32), ("M2", 775), ("M3", 775)];
            while left.iter().any(|(_, n)| *n > 0) {
                for (m, n) in left.iter_mut().filter(|(_, n)| *n > 0) {
                    *n -= 1;
                    log.push(Interaction::new(*m, "W1", 3.0, 1.0).into());
                }
            }
        }
    }
    let (s, d, t, q) = FIG1_AGGREGATE[9];
    log.push(Interaction::new(s, d, t, q).into());
    log
}

/// The pipeline with the window firing marked explicitly at `t = 4`.
pub fn flink_fig1_with_epoch(variant: Fig1Variant) -> Vec<LogRecord> {
    let mut log = flink_fig1(variant);
    let emit = log.pop().expect("emission");
    log.push(EpochMarker::new("W1", 4.0, "window-fire").into());
    log.push(emit);
    log
}

/// Passenger counts boarding at station A for station B, per hour.
pub const METRO_ARRIVALS: [(f64, usize); 3] = [(8.0, 150), (9.0, 180), (10.0, 120)];
/// Onward transfers from B half an hour after each arrival: (to C, to D).
pub const METRO_TRANSFERS: [(usize, usize); 3] = [(90, 60), (100, 80), (70, 50)];

/// Metro passengers as discrete entities. Everyone boarding at A goes to B;
/// from B each batch splits between C and D.
pub fn metro() -> Vec<LogRecord> {
    let mut log = Vec::new();
    let mut next = 1;
    for (&(t, n), &(to_c, to_d)) in METRO_ARRIVALS.iter().zip(&METRO_TRANSFERS) {
        let ids: Vec<String> = (next..next + n).map(|i| format!("P{i:04}")).collect();
        next += n;
        log.push(
            Interaction::new("A", "B", t, n as f64)
                .with_entities(ids.clone())
                .into(),
        );
        log.push(
            Interaction::new("B", "C", t + 0.5, to_c as f64)
                .with_entities(ids[..to_c].to_vec())
                .into(),
        );
        log.push(
            Interaction::new("B", "D", t + 0.5, to_d as f64)
                .with_entities(ids[to_c..to_c + to_d].to_vec())
                .into(),
        );
    }
    log
}

/// Drops entity lists, turning a discrete log into the equivalent liquid one.
pub fn strip_entities(log: &[LogRecord]) -> Vec<LogRecord> {
    log.iter()
        .map(|r| match r {
            LogRecord::Interaction(i) => LogRecord::Interaction(Interaction {
                entities: None,
                ..i.clone()
            }),
            other => other.clone(),
        })
        .collect()
}

/// Parameters of a random payment network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinancialSpec {
    pub seed: u64,
    pub vertices: usize,
    pub interactions: usize,
    pub min_amount: f64,
    pub max_amount: f64,
    /// Probability that a transfer is a copy rather than a move.
    pub replicate_rate: f64,
}

impl Default for FinancialSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            vertices: 50,
            interactions: 10_000,
            min_amount: 1.0,
            max_amount: 1000.0,
            replicate_rate: 0.0,
        }
    }
}

impl FinancialSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.vertices < 2 {
            return Err("need at least two vertices".into());
        }
        if !(self.min_amount > 0.0
            && self.min_amount <= self.max_amount
            && self.max_amount.is_finite())
        {
            return Err(format!(
                "amount range must satisfy 0 < min <= max, got [{}, {}]",
                self.min_amount, self.max_amount
            ));
        }
        if !(0.0..=1.0).contains(&self.replicate_rate) {
            return Err("replicate rate must be within [0, 1]".into());
        }
        Ok(())
    }
}

/// Random transfers between `vertices` accounts. Timestamps advance in
/// hundredths with about one tie in five; amounts are whole cents.
pub fn financial_random(spec: &FinancialSpec) -> Vec<Interaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names: Vec<String> = (0..spec.vertices).map(|i| format!("acct{i:03}")).collect();
    let mut ticks: u64 = 0;
    let lo = (spec.min_amount * 100.0).ceil() as u64;
    let hi = ((spec.max_amount * 100.0).floor() as u64).max(lo);
    (0..spec.interactions)
        .map(|_| {
            if !rng.gen_bool(0.2) {
                ticks += rng.gen_range(1..200);
            }
            let src = rng.gen_range(0..spec.vertices);
            let dst = (src + rng.gen_range(1..spec.vertices)) % spec.vertices;
            let q = rng.gen_range(lo..=hi) as f64 / 100.0;
            let mut r = Interaction::new(
                names[src].as_str(),
                names[dst].as_str(),
                ticks as f64 / 100.0,
                q,
            );
            if spec.replicate_rate > 0.0 && rng.gen_bool(spec.replicate_rate) {
                r.replicate = true;
            }
            r
        })
        .collect()
}

/// Number of sources feeding the window vertex in [`windowed`].
pub const WINDOW_SOURCES: usize = 4;

/// `windows` tumbling windows of `events` unit events each. Window `k`
/// receives its events at `t = k`, then fires at `t = k + 0.5`: an epoch
/// marker followed by one emission of the whole buffer to `Out`.
pub fn windowed(windows: usize, events: usize) -> impl Iterator<Item = LogRecord> {
    (0..windows).flat_map(move |k| {
        let t = k as f64;
        let arrivals = (0..events).map(move |i| {
            LogRecord::from(Interaction::new(
                format!("src{}", i % WINDOW_SOURCES).as_str(),
                "W",
                t,
                1.0,
            ))
        });
        let fire = [
            LogRecord::from(EpochMarker::new("W", t + 0.5, format!("fire-{k}"))),
            Interaction::new("W", "Out", t + 0.5, events as f64).into(),
        ];
        arrivals.chain(fire)
    })
}

/// Worst case for phase compression: `X` alternately receives and emits at
/// every step, each at a distinct instant.
pub fn alternating(steps: usize) -> Vec<LogRecord> {
    let mut log = Vec::with_capacity(2 * steps);
    for i in 0..steps {
        let t = 2.0 * i as f64;
        let q = 1.0 + (i % 3) as f64;
        let src = if i % 2 == 0 { "A1" } else { "A2" };
        log.push(Interaction::new(src, "X", t, 2.0 * q).into());
        log.push(Interaction::new("X", "B", t + 1.0, q).into());
    }
    log
}

/// A workload with the configuration it is meant to be ingested under.
#[derive(Clone, Debug, PartialEq)]
pub enum WorkloadSpec {
    FlinkFig1(Fig1Variant),
    Metro,
    FinancialRandom(FinancialSpec),
    Windowed { windows: usize, events: usize },
    Alternating { steps: usize },
}

impl WorkloadSpec {
    pub fn records(&self) -> Box<dyn Iterator<Item = LogRecord>> {
        match self {
            WorkloadSpec::FlinkFig1(v) => Box::new(flink_fig1(*v).into_iter()),
            WorkloadSpec::Metro => Box::new(metro().into_iter()),
            WorkloadSpec::FinancialRandom(spec) => {
                Box::new(financial_random(spec).into_iter().map(LogRecord::from))
            }
            WorkloadSpec::Windowed { windows, events } => Box::new(windowed(*windows, *events)),
            WorkloadSpec::Alternating { steps } => Box::new(alternating(*steps).into_iter()),
        }
    }

    pub fn default_config(&self) -> TinConfig {
        match self {
            WorkloadSpec::Metro => TinConfig::discrete(),
            _ => TinConfig::default(),
        }
    }
}
