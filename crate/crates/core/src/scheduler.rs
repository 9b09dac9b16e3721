//! Neighbour selection and gap search for the learning node.

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;
use crate::mobility::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LearningMode {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "visible")]
    VisibleOnly,
    #[serde(rename = "hidden")]
    HiddenOnly,
    #[serde(rename = "visible_hidden")]
    VisibleAndHidden,
}

impl LearningMode {
    pub const ALL: [LearningMode; 4] =
        [LearningMode::None, LearningMode::VisibleOnly, LearningMode::HiddenOnly, LearningMode::VisibleAndHidden];

    pub fn as_str(self) -> &'static str {
        match self {
            LearningMode::None => "none",
            LearningMode::VisibleOnly => "visible",
            LearningMode::HiddenOnly => "hidden",
            LearningMode::VisibleAndHidden => "visible_hidden",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn label(self) -> &'static str {
        match self {
            LearningMode::None => "No learning",
            LearningMode::VisibleOnly => "Visible only",
            LearningMode::HiddenOnly => "Hidden only",
            LearningMode::VisibleAndHidden => "Visible + hidden",
        }
    }

    pub fn admits(self, class: NeighborClass) -> bool {
        match self {
            LearningMode::None => false,
            LearningMode::VisibleOnly => class == NeighborClass::Visible,
            LearningMode::HiddenOnly => class == NeighborClass::Hidden,
            LearningMode::VisibleAndHidden => true,
        }
    }
}

impl std::fmt::Display for LearningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NeighborClass {
    Visible,
    Hidden,
}

/// What the learning node knows about one neighbour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evidence {
    pub id: NodeId,
    pub last_direct: Option<SimTime>,
    pub last_piggyback: Option<SimTime>,
}

impl Evidence {
    pub fn classify(&self, now: SimTime, ttl: SimTime) -> Option<NeighborClass> {
        let fresh = |t: Option<SimTime>| t.is_some_and(|t| now.saturating_sub(t) <= ttl);
        if fresh(self.last_direct) {
            Some(NeighborClass::Visible)
        } else if fresh(self.last_piggyback) {
            Some(NeighborClass::Hidden)
        } else {
            None
        }
    }

    fn recency(&self, class: NeighborClass) -> SimTime {
        match class {
            NeighborClass::Visible => self.last_direct.unwrap_or(0),
            NeighborClass::Hidden => self.last_piggyback.unwrap_or(0),
        }
    }
}

/// Picks up to `cap` neighbours admitted by `mode`: hidden ones first, then
/// visible ones. Within a class, neighbours already tracked come first,
/// then the rest by most recent evidence; ids break ties.
pub fn classify_and_select(
    evidence: &[Evidence],
    now: SimTime,
    ttl: SimTime,
    cap: usize,
    mode: LearningMode,
    incumbents: &FxHashSet<NodeId>,
) -> Vec<(NodeId, NeighborClass)> {
    let mut ranked: Vec<(u8, bool, SimTime, NodeId, NeighborClass)> = evidence
        .iter()
        .filter_map(|e| {
            let class = e.classify(now, ttl)?;
            if !mode.admits(class) {
                return None;
            }
            let class_rank = u8::from(class == NeighborClass::Visible);
            Some((class_rank, !incumbents.contains(&e.id), e.recency(class), e.id, class))
        })
        .collect();
    ranked.sort_by_key(|r| (r.0, r.1, std::cmp::Reverse(r.2), r.3));
    ranked.into_iter().take(cap).map(|r| (r.3, r.4)).collect()
}

/// A predicted transmission: start and air time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Busy {
    pub start: SimTime,
    pub air: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapSearchResult {
    pub chosen_tx: SimTime,
    pub predicted_overlap_us: SimTime,
    pub deferred_by: SimTime,
    /// No usable gap: the packet goes out immediately.
    pub no_gap: bool,
}

fn inflated(b: &Busy, guard: SimTime) -> (SimTime, SimTime) {
    (b.start.saturating_sub(guard), b.start + b.air + guard)
}

/// Total overlap of `[x, x + air)` with every inflated busy interval.
pub fn overlap_at(x: SimTime, air: SimTime, busy: &[Busy], guard: SimTime) -> SimTime {
    let end = x + air;
    busy.iter()
        .map(|b| {
            let (s, e) = inflated(b, guard);
            end.min(e).saturating_sub(x.max(s))
        })
        .sum()
}

fn union_covers(lo: SimTime, hi: SimTime, busy: &[Busy], guard: SimTime) -> bool {
    let mut iv: Vec<(SimTime, SimTime)> = busy.iter().map(|b| inflated(b, guard)).collect();
    iv.sort_unstable();
    let mut reach = lo;
    for (s, e) in iv {
        if s > reach {
            break;
        }
        reach = reach.max(e);
        if reach >= hi {
            return true;
        }
    }
    reach >= hi
}

/// Chooses a start in `[now, min(deadline − air, window_end − air)]` with
/// the least predicted overlap, earliest on ties.
///
/// The overlap is piecewise linear in the start time with breakpoints where
/// the candidate frame's edges meet an interval edge, so the minimum over a
/// closed range is attained at one of those breakpoints or at a range end;
/// only those points are evaluated.
///
/// When the range is empty, or the busy intervals cover every instant the
/// frame could occupy, the packet is sent at `now` and flagged `no_gap`.
pub fn find_gap(
    busy: &[Busy],
    now: SimTime,
    deadline: SimTime,
    window_end: SimTime,
    own_air: SimTime,
    guard: SimTime,
) -> GapSearchResult {
    let immediate = |no_gap| GapSearchResult {
        chosen_tx: now,
        predicted_overlap_us: overlap_at(now, own_air, busy, guard),
        deferred_by: 0,
        no_gap,
    };
    let limit = deadline.min(window_end);
    if limit < now + own_air {
        return immediate(true);
    }
    let lo = now;
    let hi = limit - own_air;
    if busy.is_empty() {
        return immediate(false);
    }
    if union_covers(lo, hi + own_air, busy, guard) {
        return immediate(true);
    }
    let mut candidates: Vec<SimTime> = Vec::with_capacity(4 * busy.len() + 2);
    candidates.push(lo);
    candidates.push(hi);
    for b in busy {
        let (s, e) = inflated(b, guard);
        for c in [s.checked_sub(own_air), Some(s), e.checked_sub(own_air), Some(e)].into_iter().flatten() {
            if (lo..=hi).contains(&c) {
                candidates.push(c);
            }
        }
    }
    candidates.sort_unstable();
    candidates.dedup();
    let mut best = (SimTime::MAX, lo);
    for &c in &candidates {
        let o = overlap_at(c, own_air, busy, guard);
        if o < best.0 {
            best = (o, c);
            if o == 0 {
                break;
            }
        }
    }
    GapSearchResult { chosen_tx: best.1, predicted_overlap_us: best.0, deferred_by: best.1 - now, no_gap: false }
}
