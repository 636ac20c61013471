//! Versioned JSON-lines snapshot of an index.
//!
//! Layout: one header line, then one line per state (grouped by vertex, in
//! time order), then one line per entity path. Quantities are written as
//! shortest round-trip decimal strings, timestamps as JSON numbers; both
//! reload to the identical `f64`. The header carries line counts so that a
//! file cut at a line boundary is still detected as truncated.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde_json::{json, Map, Value};

use super::{
    EntityPath, FlowKey, Hop, Outflow, PhaseKind, ProvKey, ProvMap, TemporalProvenanceIndex,
    VertexState,
};
use crate::error::SnapshotError;
use crate::model::{EntityId, Timestamp, TinConfig, VertexId};

pub const SNAPSHOT_VERSION: u64 = 1;

pub(crate) fn dec(q: f64) -> String {
    // `+ 0.0` turns -0 into 0.
    format!("{}", q + 0.0)
}

fn prov_json(prov: &ProvMap) -> Value {
    prov.iter()
        .map(|(k, q)| {
            json!([
                k.origin.as_str(),
                k.birth.value(),
                dec(*q),
                k.via_replication
            ])
        })
        .collect()
}

fn state_json(s: &VertexState) -> Value {
    let mut obj = Map::new();
    obj.insert("v".into(), s.vertex.as_str().into());
    obj.insert("t0".into(), s.t_start.value().into());
    obj.insert(
        "t1".into(),
        s.t_end.map_or(Value::Null, |t| t.value().into()),
    );
    obj.insert("b".into(), dec(s.buffer).into());
    obj.insert("prov".into(), prov_json(&s.prov));
    if !s.entities.is_empty() {
        obj.insert(
            "entities".into(),
            s.entities.iter().map(|e| e.as_str()).collect(),
        );
    }
    obj.insert("phase".into(), s.phase.as_str().into());
    obj.insert(
        "in".into(),
        s.inflows
            .iter()
            .map(|(k, q)| json!([k.peer.as_str(), k.t.value(), dec(*q), k.replicated]))
            .collect(),
    );
    obj.insert(
        "out".into(),
        s.outflows
            .iter()
            .map(|(k, f)| {
                json!([
                    k.peer.as_str(),
                    k.t.value(),
                    k.replicated,
                    dec(f.q),
                    dec(f.minted),
                    prov_json(&f.consumed)
                ])
            })
            .collect(),
    );
    if !s.epochs.is_empty() {
        obj.insert(
            "epochs".into(),
            s.epochs.iter().map(String::as_str).collect(),
        );
    }
    if s.dust != 0.0 {
        obj.insert("dust".into(), dec(s.dust).into());
    }
    Value::Object(obj)
}

fn entity_json(e: &EntityId, p: &EntityPath) -> Value {
    json!({
        "entity": e.as_str(),
        "birth": [p.birth_vertex.as_str(), p.birth_t.value()],
        "hops": p.hops.iter().map(|h| json!([
            h.from.as_str(), h.to.as_str(), h.t.value(), h.seq, h.replicated
        ])).collect::<Vec<_>>(),
    })
}

impl TemporalProvenanceIndex {
    /// Writes the whole index. Callers must not mutate the index concurrently.
    pub fn snapshot<W: Write>(&self, mut sink: W) -> Result<(), SnapshotError> {
        let touches: Map<String, Value> = self
            .timelines
            .iter()
            .map(|(v, tl)| (v.to_string(), tl.interactions.into()))
            .collect();
        let header = json!({
            "tinprov_snapshot": SNAPSHOT_VERSION,
            "config": self.config,
            "origin": self.origin.map(Timestamp::value),
            "raw_interactions": self.raw_interactions,
            "states": self.total_state_count(),
            "entities": self.entity_paths.len(),
            "touches": touches,
        });
        writeln!(sink, "{header}")?;
        for tl in self.timelines.values() {
            for s in tl.states() {
                writeln!(sink, "{}", state_json(s))?;
            }
        }
        for (e, p) in &self.entity_paths {
            writeln!(sink, "{}", entity_json(e, p))?;
        }
        sink.flush()?;
        Ok(())
    }

    pub fn snapshot_to_string(&self) -> String {
        let mut buf = Vec::new();
        self.snapshot(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("snapshot is UTF-8")
    }

    /// Reads a snapshot. Either the whole index loads or an error is returned.
    pub fn load<R: BufRead>(source: R) -> Result<Self, SnapshotError> {
        let mut lines = source.lines().enumerate();
        let (_, header) = lines.next().ok_or(SnapshotError::Truncated {
            what: "header lines",
            expected: 1,
            found: 0,
        })?;
        let header: Value = parse_line(&header?, 1)?;
        let mut p = Parser { line: 1 };
        let version = header
            .get("tinprov_snapshot")
            .and_then(Value::as_u64)
            .ok_or_else(|| p.err("missing snapshot version"))?;
        if version != SNAPSHOT_VERSION {
            return Err(SnapshotError::Version {
                found: version,
                expected: SNAPSHOT_VERSION,
            });
        }
        let config: TinConfig = serde_json::from_value(
            header
                .get("config")
                .cloned()
                .ok_or_else(|| p.err("missing config"))?,
        )
        .map_err(|e| p.err(&format!("bad config: {e}")))?;
        let origin = match header.get("origin") {
            None | Some(Value::Null) => None,
            Some(v) => Some(p.time(v)?),
        };
        let raw = p.u64_field(&header, "raw_interactions")?;
        let n_states = p.u64_field(&header, "states")? as usize;
        let n_entities = p.u64_field(&header, "entities")? as usize;
        let touches = header
            .get("touches")
            .and_then(Value::as_object)
            .ok_or_else(|| p.err("missing touches"))?
            .iter()
            .map(|(v, n)| {
                let v = VertexId::new(v).ok_or_else(|| p.err("empty vertex id"))?;
                let n = n.as_u64().ok_or_else(|| p.err("bad touch count"))?;
                Ok((v, n))
            })
            .collect::<Result<BTreeMap<_, _>, SnapshotError>>()?;

        let mut index = TemporalProvenanceIndex::new(config);
        let mut pending_end: BTreeMap<VertexId, Option<Timestamp>> = BTreeMap::new();
        let mut seen_states = 0;
        let mut seen_entities = 0;
        for (i, line) in lines {
            p.line = i + 1;
            let value = parse_line(&line?, p.line)?;
            if seen_states < n_states {
                let state = p.state(&value)?;
                let v = state.vertex.clone();
                if let Some(Some(expected)) = pending_end.get(&v) {
                    if *expected != state.t_start {
                        return Err(p.err("state does not start where its predecessor ended"));
                    }
                } else if pending_end.contains_key(&v) {
                    return Err(p.err("state follows an open state"));
                }
                let t_end = value
                    .get("t1")
                    .filter(|t| !t.is_null())
                    .map(|t| p.time(t))
                    .transpose()?;
                if t_end.is_some_and(|end| end < state.t_start) {
                    return Err(p.err("state ends before it starts"));
                }
                index
                    .close_and_append(&v, state)
                    .map_err(|e| p.err(&e.to_string()))?;
                index.open_state_mut(&v).expect("just appended").t_end = t_end;
                pending_end.insert(v, t_end);
                seen_states += 1;
            } else if seen_entities < n_entities {
                let (e, path) = p.entity(&value)?;
                index.entity_paths.insert(e, path);
                seen_entities += 1;
            } else {
                return Err(p.err("unexpected trailing line"));
            }
        }
        if seen_states < n_states {
            return Err(SnapshotError::Truncated {
                what: "states",
                expected: n_states,
                found: seen_states,
            });
        }
        if seen_entities < n_entities {
            return Err(SnapshotError::Truncated {
                what: "entity paths",
                expected: n_entities,
                found: seen_entities,
            });
        }
        if let Some((v, _)) = pending_end.iter().find(|(_, end)| end.is_some()) {
            return Err(SnapshotError::Corrupt {
                line: p.line,
                reason: format!("last state of {v} is closed"),
            });
        }
        index.origin = origin;
        index.set_interaction_counts(raw, touches);
        Ok(index)
    }

    pub fn load_from_str(text: &str) -> Result<Self, SnapshotError> {
        Self::load(text.as_bytes())
    }
}

fn parse_line(line: &str, n: usize) -> Result<Value, SnapshotError> {
    serde_json::from_str(line).map_err(|e| SnapshotError::Corrupt {
        line: n,
        reason: e.to_string(),
    })
}

struct Parser {
    line: usize,
}

impl Parser {
    fn err(&self, reason: &str) -> SnapshotError {
        SnapshotError::Corrupt {
            line: self.line,
            reason: reason.to_string(),
        }
    }

    fn u64_field(&self, obj: &Value, name: &str) -> Result<u64, SnapshotError> {
        obj.get(name)
            .and_then(Value::as_u64)
            .ok_or_else(|| self.err(&format!("missing or invalid `{name}`")))
    }

    fn time(&self, v: &Value) -> Result<Timestamp, SnapshotError> {
        v.as_f64()
            .and_then(Timestamp::new)
            .ok_or_else(|| self.err("invalid timestamp"))
    }

    fn dec(&self, v: &Value) -> Result<f64, SnapshotError> {
        v.as_str()
            .and_then(|s| s.parse::<f64>().ok())
            .filter(|q| q.is_finite())
            .ok_or_else(|| self.err("invalid decimal quantity"))
    }

    fn vertex(&self, v: &Value) -> Result<VertexId, SnapshotError> {
        v.as_str()
            .and_then(VertexId::new)
            .ok_or_else(|| self.err("invalid vertex id"))
    }

    fn boolean(&self, v: &Value) -> Result<bool, SnapshotError> {
        v.as_bool().ok_or_else(|| self.err("expected boolean"))
    }

    fn array<'a>(&self, v: Option<&'a Value>, what: &str) -> Result<&'a Vec<Value>, SnapshotError> {
        v.and_then(Value::as_array)
            .ok_or_else(|| self.err(&format!("`{what}` must be an array")))
    }

    fn tuple<'a>(&self, v: &'a Value, len: usize) -> Result<&'a [Value], SnapshotError> {
        match v.as_array() {
            Some(items) if items.len() == len => Ok(items),
            _ => Err(self.err(&format!("expected a {len}-element array"))),
        }
    }

    fn prov(&self, v: Option<&Value>) -> Result<ProvMap, SnapshotError> {
        let mut map = ProvMap::new();
        for item in self.array(v, "prov")? {
            let t = self.tuple(item, 4)?;
            let key = ProvKey {
                origin: self.vertex(&t[0])?,
                birth: self.time(&t[1])?,
                via_replication: self.boolean(&t[3])?,
            };
            if map.insert(key, self.dec(&t[2])?).is_some() {
                return Err(self.err("duplicate provenance key"));
            }
        }
        Ok(map)
    }

    fn state(&self, v: &Value) -> Result<VertexState, SnapshotError> {
        let vertex = self.vertex(v.get("v").unwrap_or(&Value::Null))?;
        let t_start = self.time(v.get("t0").unwrap_or(&Value::Null))?;
        let mut s = VertexState::idle(vertex, t_start);
        s.buffer = self.dec(v.get("b").unwrap_or(&Value::Null))?;
        s.prov = self.prov(v.get("prov"))?;
        if let Some(list) = v.get("entities") {
            for e in self.array(Some(list), "entities")? {
                let id = e
                    .as_str()
                    .and_then(EntityId::new)
                    .ok_or_else(|| self.err("invalid entity id"))?;
                s.entities.insert(id);
            }
        }
        s.phase = v
            .get("phase")
            .and_then(Value::as_str)
            .and_then(PhaseKind::parse)
            .ok_or_else(|| self.err("invalid phase"))?;
        for item in self.array(v.get("in"), "in")? {
            let t = self.tuple(item, 4)?;
            let key = FlowKey {
                peer: self.vertex(&t[0])?,
                t: self.time(&t[1])?,
                replicated: self.boolean(&t[3])?,
            };
            s.inflows.insert(key, self.dec(&t[2])?);
        }
        for item in self.array(v.get("out"), "out")? {
            let t = self.tuple(item, 6)?;
            let key = FlowKey {
                peer: self.vertex(&t[0])?,
                t: self.time(&t[1])?,
                replicated: self.boolean(&t[2])?,
            };
            let flow = Outflow {
                q: self.dec(&t[3])?,
                minted: self.dec(&t[4])?,
                consumed: self.prov(Some(&t[5]))?,
            };
            s.outflows.insert(key, flow);
        }
        if let Some(epochs) = v.get("epochs") {
            for e in self.array(Some(epochs), "epochs")? {
                s.epochs.push(
                    e.as_str()
                        .ok_or_else(|| self.err("epoch label must be a string"))?
                        .into(),
                );
            }
        }
        if let Some(d) = v.get("dust") {
            s.dust = self.dec(d)?;
        }
        Ok(s)
    }

    fn entity(&self, v: &Value) -> Result<(EntityId, EntityPath), SnapshotError> {
        let id = v
            .get("entity")
            .and_then(Value::as_str)
            .and_then(EntityId::new)
            .ok_or_else(|| self.err("invalid entity line"))?;
        let birth = self.tuple(v.get("birth").unwrap_or(&Value::Null), 2)?;
        let mut path = EntityPath {
            birth_vertex: self.vertex(&birth[0])?,
            birth_t: self.time(&birth[1])?,
            hops: Vec::new(),
        };
        for item in self.array(v.get("hops"), "hops")? {
            let h = self.tuple(item, 5)?;
            path.hops.push(Hop {
                from: self.vertex(&h[0])?,
                to: self.vertex(&h[1])?,
                t: self.time(&h[2])?,
                seq: h[3].as_u64().ok_or_else(|| self.err("invalid hop seq"))?,
                replicated: self.boolean(&h[4])?,
            });
        }
        Ok((id, path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ts;

    #[test]
    fn empty_index_round_trips() {
        let idx = TemporalProvenanceIndex::new(TinConfig::default());
        let text = idx.snapshot_to_string();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(TemporalProvenanceIndex::load_from_str(&text).unwrap(), idx);
    }

    #[test]
    fn version_mismatch_is_reported() {
        let idx = TemporalProvenanceIndex::new(TinConfig::default());
        let text = idx
            .snapshot_to_string()
            .replace("\"tinprov_snapshot\":1", "\"tinprov_snapshot\":7");
        assert!(matches!(
            TemporalProvenanceIndex::load_from_str(&text),
            Err(SnapshotError::Version {
                found: 7,
                expected: 1
            })
        ));
    }

    #[test]
    fn decimals_are_exact() {
        for q in [
            0.1,
            1.0 / 3.0,
            288.0,
            1e-12,
            123_456_789.123_456_79,
            f64::MIN_POSITIVE,
        ] {
            assert_eq!(dec(q).parse::<f64>().unwrap(), q);
        }
        assert_eq!(dec(288.0), "288");
        let _ = ts(0.0);
    }
}
