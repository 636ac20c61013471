//! Splitting an outflow across the sender's provenance entries.

use crate::error::AttributionError;
use crate::index::{ProvKey, ProvMap, ProvenanceEntry};
use crate::model::{AttributionPolicy, Timestamp, VertexId};

/// Result of charging one outflow against a buffer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Attribution {
    /// Entries the outflow carries away.
    pub consumed: ProvMap,
    /// What stays behind, with sub-tolerance entries removed.
    pub remaining: ProvMap,
    /// `min(out_q, buffer)`.
    pub taken: f64,
    /// Quantity of the entries dropped from `remaining`.
    pub dust: f64,
}

impl Attribution {
    /// Part of the outflow not covered by the buffer; minted at the sender
    /// when it exceeds `tolerance`.
    pub fn deficit(&self, out_q: f64, tolerance: f64) -> f64 {
        let d = out_q - self.taken;
        if d > tolerance {
            d
        } else {
            0.0
        }
    }
}

/// Consumption order for FIFO: oldest birth first, ties by origin name, then
/// moved before replicated. LIFO reverses the birth order only.
fn ordered_keys(prov: &ProvMap, newest_first: bool) -> Vec<&ProvKey> {
    let mut keys: Vec<&ProvKey> = prov.keys().collect();
    keys.sort_by(|a, b| {
        let by_birth = if newest_first {
            b.birth.cmp(&a.birth)
        } else {
            a.birth.cmp(&b.birth)
        };
        by_birth
            .then_with(|| a.origin.cmp(&b.origin))
            .then_with(|| a.via_replication.cmp(&b.via_replication))
    });
    keys
}

/// Charges an outflow of `out_q` against `prov` (whose total is `buffer`).
pub fn attribute_outflow(
    prov: &ProvMap,
    buffer: f64,
    out_q: f64,
    policy: AttributionPolicy,
    tolerance: f64,
) -> Result<Attribution, AttributionError> {
    if !(buffer.is_finite() && buffer >= 0.0 && out_q.is_finite()) {
        return Err(AttributionError::NegativeInput {
            buffer,
            outflow: out_q,
        });
    }
    if out_q <= 0.0 {
        return Err(AttributionError::NonPositiveOutflow(out_q));
    }
    let taken = out_q.min(buffer);
    let mut consumed = ProvMap::new();
    let mut remaining = ProvMap::new();
    match policy {
        AttributionPolicy::Proportional => {
            let all = taken >= buffer;
            for (k, &q) in prov {
                let c = if all { q } else { taken * q / buffer };
                if c > 0.0 {
                    consumed.insert(k.clone(), c);
                }
                if !all {
                    remaining.insert(k.clone(), q - c);
                }
            }
        }
        AttributionPolicy::Fifo | AttributionPolicy::Lifo => {
            let mut left = taken;
            for k in ordered_keys(prov, policy == AttributionPolicy::Lifo) {
                let q = prov[k];
                let c = q.min(left.max(0.0));
                left -= c;
                if c > 0.0 {
                    consumed.insert(k.clone(), c);
                }
                if c < q {
                    remaining.insert(k.clone(), q - c);
                }
            }
        }
    }
    let mut dust = 0.0;
    remaining.retain(|_, q| {
        if *q <= tolerance {
            dust += *q;
            false
        } else {
            true
        }
    });
    Ok(Attribution {
        consumed,
        remaining,
        taken,
        dust,
    })
}

/// The entry created at `v` to cover an outflow the buffer could not.
pub fn mint_birth(v: &VertexId, t: Timestamp, deficit: f64) -> Option<ProvenanceEntry> {
    (deficit > 0.0).then(|| ProvenanceEntry::new(v.clone(), t, deficit))
}
