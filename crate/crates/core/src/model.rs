//! Temporal interaction network data model.
//!
//! A TIN is a set of vertices exchanging quantities through time-stamped
//! interactions. Each interaction moves (or copies) `q` units from `src` to
//! `dst` at time `t`. Vertices hold buffers whose content and provenance the
//! [`crate::engine`] evolves; this module only defines the shared value types,
//! the record formats they are read from, and policy configuration.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ParseError;

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

macro_rules! interned_id {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(Arc<str>);

        impl $name {
            /// Builds an identifier, rejecting the empty string.
            pub fn new(name: impl AsRef<str>) -> Option<Self> {
                let name = name.as_ref();
                if name.is_empty() {
                    None
                } else {
                    Some(Self(Arc::from(name)))
                }
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        /// Panics on the empty string; use [`Self::new`] for untrusted input.
        impl From<&str> for $name {
            fn from(name: &str) -> Self {
                Self::new(name).expect(concat!($what, " must be non-empty"))
            }
        }

        impl From<String> for $name {
            fn from(name: String) -> Self {
                Self::from(name.as_str())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:?}", &*self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                Self::new(&raw).ok_or_else(|| {
                    serde::de::Error::custom(concat!($what, " must be non-empty"))
                })
            }
        }
    };
}

interned_id!(
    /// A vertex of the network (operator instance, station, account).
    /// Case-sensitive and cheap to clone.
    VertexId,
    "vertex id"
);

interned_id!(
    /// Identity of one discrete entity (a passenger, a vehicle).
    EntityId,
    "entity id"
);

// ---------------------------------------------------------------------------
// Time
// ---------------------------------------------------------------------------

/// A non-negative, finite point in abstract time units.
///
/// Totally ordered so it can key ordered maps.
#[derive(Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Timestamp(f64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0.0);
    /// Largest representable instant; closes unbounded ranges.
    pub const MAX: Timestamp = Timestamp(f64::MAX);

    pub fn new(t: f64) -> Option<Self> {
        (t.is_finite() && t >= 0.0).then_some(Self(if t == 0.0 { 0.0 } else { t }))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Eq for Timestamp {}

impl PartialOrd for Timestamp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Timestamp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl std::hash::Hash for Timestamp {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl fmt::Debug for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = f64::deserialize(d)?;
        Timestamp::new(raw)
            .ok_or_else(|| serde::de::Error::custom("timestamp must be finite and non-negative"))
    }
}

/// Shorthand used throughout tests and generators.
///
/// Panics on negative or non-finite input.
pub fn ts(t: f64) -> Timestamp {
    Timestamp::new(t).unwrap_or_else(|| panic!("invalid timestamp {t}"))
}

// ---------------------------------------------------------------------------
// Interactions
// ---------------------------------------------------------------------------

/// One time-stamped quantity transfer `(src, dst, t, q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Interaction {
    pub src: VertexId,
    pub dst: VertexId,
    pub t: Timestamp,
    pub q: f64,
    /// Present in discrete mode; its length equals `q`.
    pub entities: Option<Vec<EntityId>>,
    /// The source keeps its quantity (digital copy) instead of losing it.
    pub replicate: bool,
    /// Log position, assigned at ingestion.
    pub seq: Option<u64>,
}

impl Interaction {
    /// A liquid, non-replicating interaction.
    pub fn new(src: impl Into<VertexId>, dst: impl Into<VertexId>, t: f64, q: f64) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            t: ts(t),
            q,
            entities: None,
            replicate: false,
            seq: None,
        }
    }

    pub fn with_entities<I, E>(mut self, entities: I) -> Self
    where
        I: IntoIterator<Item = E>,
        E: Into<EntityId>,
    {
        self.entities = Some(entities.into_iter().map(Into::into).collect());
        self
    }

    pub fn replicated(mut self) -> Self {
        self.replicate = true;
        self
    }

    /// Checks the value-level invariants that do not depend on log context.
    pub fn check(&self, class: DataClass) -> Result<(), ParseError> {
        if !(self.q.is_finite() && self.q > 0.0) {
            return Err(ParseError::NonPositiveQuantity(self.q));
        }
        if self.src == self.dst {
            return Err(ParseError::SelfLoop(self.src.to_string()));
        }
        if class == DataClass::Discrete {
            let entities = self.entities.as_ref().ok_or(ParseError::MissingEntities)?;
            if self.q.fract() != 0.0 {
                return Err(ParseError::NonIntegerQuantity(self.q));
            }
            if entities.len() as f64 != self.q {
                return Err(ParseError::EntityCountMismatch {
                    expected: self.q,
                    found: entities.len(),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::json!({
            "src": self.src.as_str(),
            "dst": self.dst.as_str(),
            "t": self.t.value(),
            "q": self.q,
        });
        if let Some(entities) = &self.entities {
            obj["entities"] = entities.iter().map(|e| e.as_str()).collect();
        }
        if self.replicate {
            obj["replicate"] = true.into();
        }
        obj
    }

    pub fn to_jsonl(&self) -> String {
        self.to_json().to_string()
    }

    /// Liquid-only CSV form; entities and the replicate flag are not representable.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        wtr.write_record([
            self.src.as_str(),
            self.dst.as_str(),
            &self.t.value().to_string(),
            &self.q.to_string(),
        ])
        .expect("writing to a Vec cannot fail");
        let mut line = String::from_utf8(wtr.into_inner().expect("flush to Vec")).expect("utf8");
        line.truncate(line.trim_end_matches('\n').len());
        line
    }
}

/// An explicit internal event (e.g. a window firing) that forces a state
/// boundary at a vertex without moving any quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMarker {
    pub vertex: VertexId,
    pub t: Timestamp,
    pub label: String,
}

impl EpochMarker {
    pub fn new(vertex: impl Into<VertexId>, t: f64, label: impl Into<String>) -> Self {
        Self {
            vertex: vertex.into(),
            t: ts(t),
            label: label.into(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::json!({
            "epoch": self.label,
            "vertex": self.vertex.as_str(),
            "t": self.t.value(),
        })
        .to_string()
    }
}

/// One line of an interaction log.
#[derive(Clone, Debug, PartialEq)]
pub enum LogRecord {
    Interaction(Interaction),
    Epoch(EpochMarker),
}

impl LogRecord {
    pub fn t(&self) -> Timestamp {
        match self {
            LogRecord::Interaction(r) => r.t,
            LogRecord::Epoch(e) => e.t,
        }
    }

    pub fn to_jsonl(&self) -> String {
        match self {
            LogRecord::Interaction(r) => r.to_jsonl(),
            LogRecord::Epoch(e) => e.to_jsonl(),
        }
    }
}

impl From<Interaction> for LogRecord {
    fn from(r: Interaction) -> Self {
        LogRecord::Interaction(r)
    }
}

impl From<EpochMarker> for LogRecord {
    fn from(e: EpochMarker) -> Self {
        LogRecord::Epoch(e)
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataClass {
    /// Identity-preserving units traced as explicit entity paths.
    Discrete,
    /// Mergeable and splittable quantities.
    #[default]
    Liquid,
}

/// Which provenance entries a liquid outflow consumes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionPolicy {
    /// Every entry shrinks by the same fraction.
    #[default]
    Proportional,
    /// Oldest birth time first.
    Fifo,
    /// Newest birth time first.
    Lifo,
}

/// When the engine closes a vertex state and opens a new one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryPolicy {
    /// Boundaries at phase transitions; interactions sharing an instant share a state.
    #[default]
    PhaseChange,
    /// One state per interaction, no compression.
    PerInteraction,
    /// Phase boundaries plus forced boundaries at every multiple of `delta`.
    TimeBucket { delta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinConfig {
    pub data_class: DataClass,
    pub attribution: AttributionPolicy,
    pub boundary: BoundaryPolicy,
    pub float_tolerance: f64,
}

impl Default for TinConfig {
    fn default() -> Self {
        Self {
            data_class: DataClass::Liquid,
            attribution: AttributionPolicy::Proportional,
            boundary: BoundaryPolicy::PhaseChange,
            float_tolerance: 1e-9,
        }
    }
}

impl TinConfig {
    pub fn liquid(attribution: AttributionPolicy) -> Self {
        Self {
            attribution,
            ..Self::default()
        }
    }

    pub fn discrete() -> Self {
        Self {
            data_class: DataClass::Discrete,
            ..Self::default()
        }
    }

    pub fn with_boundary(mut self, boundary: BoundaryPolicy) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_attribution(mut self, attribution: AttributionPolicy) -> Self {
        self.attribution = attribution;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.float_tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.float_tolerance.is_finite() && self.float_tolerance >= 0.0) {
            return Err(format!(
                "float tolerance must be >= 0, got {}",
                self.float_tolerance
            ));
        }
        if let BoundaryPolicy::TimeBucket { delta } = self.boundary {
            if !(delta.is_finite() && delta > 0.0) {
                return Err(format!("time bucket delta must be > 0, got {delta}"));
            }
        }
        Ok(())
    }
}

impl FromStr for AttributionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "proportional" => Ok(Self::Proportional),
            "fifo" => Ok(Self::Fifo),
            "lifo" => Ok(Self::Lifo),
            _ => Err(format!("unknown attribution policy: {s}")),
        }
    }
}

impl FromStr for DataClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "liquid" => Ok(Self::Liquid),
            "discrete" => Ok(Self::Discrete),
            _ => Err(format!("unknown data class: {s}")),
        }
    }
}

// ---------------------------------------------------------------------------
// Record parsing
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            _ => Err(format!("unknown input format: {s}")),
        }
    }
}

/// Parses one interaction record. Epoch lines are rejected; use
/// [`parse_record`] for logs that may contain them.
pub fn parse_interaction(
    line: &str,
    format: InputFormat,
    class: DataClass,
) -> Result<Interaction, ParseError> {
    match parse_record(line, format, class)? {
        LogRecord::Interaction(r) => Ok(r),
        LogRecord::Epoch(_) => Err(ParseError::Malformed(
            "expected an interaction, found an epoch marker".into(),
        )),
    }
}

/// Parses one log line: an interaction, or (JSONL only) an epoch marker of the
/// form `{"epoch":label,"vertex":v,"t":t}`.
pub fn parse_record(
    line: &str,
    format: InputFormat,
    class: DataClass,
) -> Result<LogRecord, ParseError> {
    match format {
        InputFormat::Jsonl => parse_json_record(line, class),
        InputFormat::Csv => {
            if class == DataClass::Discrete {
                return Err(ParseError::CsvRequiresLiquid);
            }
            parse_csv_record(line).map(LogRecord::Interaction)
        }
    }
}

fn parse_json_record(line: &str, class: DataClass) -> Result<LogRecord, ParseError> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| ParseError::Malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| ParseError::Malformed("record is not a JSON object".into()))?;

    let field_str = |name: &'static str| -> Result<&str, ParseError> {
        match obj.get(name) {
            None => Err(ParseError::MissingField(name)),
            Some(v) => v.as_str().ok_or(ParseError::InvalidField {
                field: name,
                reason: "expected a string".into(),
            }),
        }
    };
    let field_num = |name: &'static str| -> Result<f64, ParseError> {
        match obj.get(name) {
            None => Err(ParseError::MissingField(name)),
            Some(v) => v.as_f64().ok_or(ParseError::InvalidField {
                field: name,
                reason: "expected a number".into(),
            }),
        }
    };
    let vertex = |name: &'static str| -> Result<VertexId, ParseError> {
        VertexId::new(field_str(name)?).ok_or(ParseError::InvalidField {
            field: name,
            reason: "vertex id must be non-empty".into(),
        })
    };
    let time = |raw: f64| Timestamp::new(raw).ok_or(ParseError::NegativeTimestamp(raw));

    if obj.contains_key("epoch") {
        let label = field_str("epoch")?.to_string();
        return Ok(LogRecord::Epoch(EpochMarker {
            vertex: vertex("vertex")?,
            t: time(field_num("t")?)?,
            label,
        }));
    }

    let src = vertex("src")?;
    let dst = vertex("dst")?;
    let t = time(field_num("t")?)?;
    let q = field_num("q")?;
    let replicate = match obj.get("replicate") {
        None | Some(serde_json::Value::Null) => false,
        Some(v) => v.as_bool().ok_or(ParseError::InvalidField {
            field: "replicate",
            reason: "expected a boolean".into(),
        })?,
    };
    // Liquid ingestion of an entity-annotated log ignores the identities.
    let entities = match (class, obj.get("entities")) {
        (DataClass::Liquid, _) | (DataClass::Discrete, None | Some(serde_json::Value::Null)) => {
            None
        }
        (DataClass::Discrete, Some(v)) => {
            let list = v.as_array().ok_or(ParseError::InvalidField {
                field: "entities",
                reason: "expected an array of strings".into(),
            })?;
            let ids = list
                .iter()
                .map(|e| {
                    e.as_str()
                        .and_then(EntityId::new)
                        .ok_or(ParseError::InvalidField {
                            field: "entities",
                            reason: "entity ids must be non-empty strings".into(),
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Some(ids)
        }
    };

    let record = Interaction {
        src,
        dst,
        t,
        q,
        entities,
        replicate,
        seq: None,
    };
    record.check(class)?;
    Ok(LogRecord::Interaction(record))
}

fn parse_csv_record(line: &str) -> Result<Interaction, ParseError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(line.as_bytes());
    let record = rdr
        .records()
        .next()
        .ok_or_else(|| ParseError::Malformed("empty CSV record".into()))?
        .map_err(|e| ParseError::Malformed(e.to_string()))?;
    if record.len() != 4 {
        return Err(ParseError::Malformed(format!(
            "expected 4 CSV fields (src,dst,t,q), found {}",
            record.len()
        )));
    }
    let vertex = |idx: usize, name: &'static str| {
        VertexId::new(&record[idx]).ok_or(ParseError::InvalidField {
            field: name,
            reason: "vertex id must be non-empty".into(),
        })
    };
    let number = |idx: usize, name: &'static str| {
        record[idx]
            .parse::<f64>()
            .map_err(|_| ParseError::InvalidField {
                field: name,
                reason: format!("not a number: {:?}", &record[idx]),
            })
    };
    let raw_t = number(2, "t")?;
    let r = Interaction {
        src: vertex(0, "src")?,
        dst: vertex(1, "dst")?,
        t: Timestamp::new(raw_t).ok_or(ParseError::NegativeTimestamp(raw_t))?,
        q: number(3, "q")?,
        entities: None,
        replicate: false,
        seq: None,
    };
    r.check(DataClass::Liquid)?;
    Ok(r)
}

/// True for the optional `src,dst,t,q` header row of CSV input.
pub fn is_csv_header(line: &str) -> bool {
    let fields: Vec<_> = line
        .split(',')
        .map(|f| f.trim().to_ascii_lowercase())
        .collect();
    fields == ["src", "dst", "t", "q"]
}
