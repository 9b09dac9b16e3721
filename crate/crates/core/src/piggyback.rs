//! Neighbour reception reports carried inside outgoing frames.
//!
//! Wire format, per entry (9 bytes, little-endian):
//!
//! ```text
//! neighbor u32 | ptype u8 | age_ms u16 | interval_ms u16
//! ```
//!
//! `age_ms` is measured from the generation instant of the carrying frame
//! and `interval_ms` is the reporter's estimate of that neighbour's interval
//! for the type (0 when only one packet was seen), corrected for missed
//! packets with [`loss_corrected_gap`]. Both saturate at `u16::MAX`.

use std::collections::VecDeque;

use rustc_hash::FxHashMap;

use crate::apps::PacketType;
use crate::kernel::{SimTime, MICROS_PER_MS};
use crate::mobility::NodeId;

pub const ENTRY_BYTES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PiggybackEntry {
    pub neighbor: NodeId,
    pub ptype: PacketType,
    pub age_ms: u16,
    pub interval_ms: u16,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PiggybackError {
    #[error("block length {0} is not a multiple of {ENTRY_BYTES}")]
    Length(usize),
    #[error("unknown packet type code {0}")]
    PacketType(u8),
}

pub fn encode(entries: &[PiggybackEntry]) -> Vec<u8> {
    let mut out = Vec::with_capacity(entries.len() * ENTRY_BYTES);
    for e in entries {
        out.extend_from_slice(&e.neighbor.to_le_bytes());
        out.push(e.ptype.code());
        out.extend_from_slice(&e.age_ms.to_le_bytes());
        out.extend_from_slice(&e.interval_ms.to_le_bytes());
    }
    out
}

pub fn decode(block: &[u8]) -> Result<Vec<PiggybackEntry>, PiggybackError> {
    if !block.len().is_multiple_of(ENTRY_BYTES) {
        return Err(PiggybackError::Length(block.len()));
    }
    block
        .chunks_exact(ENTRY_BYTES)
        .map(|c| {
            Ok(PiggybackEntry {
                neighbor: u32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                ptype: PacketType::from_code(c[4]).ok_or(PiggybackError::PacketType(c[4]))?,
                age_ms: u16::from_le_bytes([c[5], c[6]]),
                interval_ms: u16::from_le_bytes([c[7], c[8]]),
            })
        })
        .collect()
}

fn saturating_ms(us: SimTime) -> u16 {
    ((us + MICROS_PER_MS / 2) / MICROS_PER_MS).min(u64::from(u16::MAX)) as u16
}

/// Transmission time implied by an entry in a frame generated at
/// `generated_at`.
pub fn reconstructed_tx(entry: &PiggybackEntry, generated_at: SimTime) -> SimTime {
    generated_at.saturating_sub(u64::from(entry.age_ms) * MICROS_PER_MS)
}

/// Interval implied by a reception gap given the previous estimate. A gap
/// within 10 % of `k` times the estimate (`k >= 2`) is read as `k - 1`
/// lost packets and yields `gap / k`; any other gap is taken as is.
pub fn loss_corrected_gap(gap: SimTime, estimate: Option<SimTime>) -> SimTime {
    let Some(est) = estimate.filter(|&e| e > 0) else { return gap };
    let k = (gap as f64 / est as f64).round();
    if k >= 2.0 && (gap as f64 - k * est as f64).abs() <= 0.1 * est as f64 {
        (gap as f64 / k).round() as SimTime
    } else {
        gap
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Record {
    last: SimTime,
    interval: Option<SimTime>,
}

/// Last-reception bookkeeping every node keeps about its neighbours.
#[derive(Debug, Clone, Default)]
pub struct ReceptionHistory {
    records: FxHashMap<(NodeId, PacketType), Record>,
    recent: VecDeque<(NodeId, PacketType)>,
    recent_cap: usize,
}

impl ReceptionHistory {
    pub fn new(budget: usize) -> Self {
        Self { records: FxHashMap::default(), recent: VecDeque::new(), recent_cap: (4 * budget).max(8) }
    }

    pub fn record(&mut self, neighbor: NodeId, ptype: PacketType, at: SimTime) {
        let rec = self.records.entry((neighbor, ptype)).or_insert(Record { last: at, interval: None });
        if at > rec.last {
            rec.interval = Some(loss_corrected_gap(at - rec.last, rec.interval));
            rec.last = at;
        }
        self.recent.push_back((neighbor, ptype));
        if self.recent.len() > self.recent_cap {
            self.recent.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Up to `budget` most recently heard `(neighbour, type)` pairs, newest
    /// first, with ages relative to `now`.
    pub fn report(&self, now: SimTime, budget: usize) -> Vec<PiggybackEntry> {
        let mut out: Vec<PiggybackEntry> = Vec::with_capacity(budget);
        for &(neighbor, ptype) in self.recent.iter().rev() {
            if out.len() >= budget {
                break;
            }
            if out.iter().any(|e| e.neighbor == neighbor && e.ptype == ptype) {
                continue;
            }
            let rec = self.records[&(neighbor, ptype)];
            out.push(PiggybackEntry {
                neighbor,
                ptype,
                age_ms: saturating_ms(now.saturating_sub(rec.last)),
                interval_ms: rec.interval.map_or(0, saturating_ms),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_history_gives_empty_block() {
        let h = ReceptionHistory::new(16);
        assert!(encode(&h.report(1_000, 16)).is_empty());
    }

    #[test]
    fn sixteen_entries_are_144_bytes() {
        let mut h = ReceptionHistory::new(16);
        for n in 0..40 {
            h.record(n, PacketType::Cam, 1_000 * u64::from(n));
        }
        let block = encode(&h.report(50_000, 16));
        assert_eq!(block.len(), 144);
        let entries = decode(&block).unwrap();
        assert_eq!(entries[0].neighbor, 39);
        assert_eq!(entries[0].age_ms, 11);
        assert_eq!(entries[15].neighbor, 24);
    }

    #[test]
    fn interval_and_dedup() {
        let mut h = ReceptionHistory::new(4);
        h.record(5, PacketType::Cam, 0);
        h.record(6, PacketType::Cam, 10_000);
        h.record(5, PacketType::Cam, 100_400);
        let r = h.report(120_000, 4);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0], PiggybackEntry { neighbor: 5, ptype: PacketType::Cam, age_ms: 20, interval_ms: 100 });
        assert_eq!(r[1].interval_ms, 0);
    }

    #[test]
    fn saturation() {
        let mut h = ReceptionHistory::new(4);
        h.record(1, PacketType::Ldm, 0);
        h.record(1, PacketType::Ldm, 100_000_000);
        let r = h.report(200_000_000, 4);
        assert_eq!(r[0].age_ms, u16::MAX);
        assert_eq!(r[0].interval_ms, u16::MAX);
    }

    #[test]
    fn malformed_blocks() {
        assert_eq!(decode(&[0; 10]), Err(PiggybackError::Length(10)));
        let mut b = encode(&[PiggybackEntry { neighbor: 1, ptype: PacketType::Cpm, age_ms: 3, interval_ms: 4 }]);
        b[4] = 9;
        assert_eq!(decode(&b), Err(PiggybackError::PacketType(9)));
    }

    #[test]
    fn reconstruction() {
        let e = PiggybackEntry { neighbor: 1, ptype: PacketType::Cam, age_ms: 50, interval_ms: 100 };
        assert_eq!(reconstructed_tx(&e, 10_000_000), 9_950_000);
    }
}
