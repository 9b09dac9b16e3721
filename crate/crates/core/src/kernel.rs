//! Event queue and virtual clock.
//!
//! Events are ordered by `(time, sequence)`; the sequence number is assigned
//! at scheduling time, so two events at the same instant come out in the
//! order they were scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::hash::{Hash, Hasher};

use rustc_hash::{FxHashSet, FxHasher};

/// Microseconds since simulation start.
pub type SimTime = u64;

pub const MICROS_PER_MS: SimTime = 1_000;
pub const MICROS_PER_SEC: SimTime = 1_000_000;

pub fn ms(v: u64) -> SimTime {
    v * MICROS_PER_MS
}

pub fn secs_f64(t: SimTime) -> f64 {
    t as f64 / MICROS_PER_SEC as f64
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("event scheduled in the past: now {now} µs, requested {requested} µs")]
    PastEvent { now: SimTime, requested: SimTime },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn sequence(self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelStats {
    pub scheduled: u64,
    pub cancelled: u64,
    pub dispatched: u64,
}

struct Queued<E> {
    time: SimTime,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Queued<E> {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}

impl<E> Eq for Queued<E> {}

impl<E> PartialOrd for Queued<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Queued<E> {
    // BinaryHeap is a max-heap; reverse so the earliest event is on top.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

pub struct Kernel<E> {
    now: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<E>>,
    pending: FxHashSet<u64>,
    stats: KernelStats,
    digest: u64,
}

impl<E: Hash> Default for Kernel<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Hash> Kernel<E> {
    pub fn new() -> Self {
        Self {
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
            pending: FxHashSet::default(),
            stats: KernelStats::default(),
            digest: 0xcbf2_9ce4_8422_2325,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn stats(&self) -> KernelStats {
        self.stats
    }

    /// Number of scheduled, not yet dispatched and not cancelled events.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Running hash over every dispatched `(time, sequence, event)`.
    pub fn digest(&self) -> u64 {
        self.digest
    }

    pub fn schedule(&mut self, time: SimTime, event: E) -> Result<EventHandle, KernelError> {
        if time < self.now {
            return Err(KernelError::PastEvent { now: self.now, requested: time });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued { time, seq, event });
        self.pending.insert(seq);
        self.stats.scheduled += 1;
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(&mut self, delay: SimTime, event: E) -> EventHandle {
        let at = self.now + delay;
        self.schedule(at, event).expect("relative schedule is never in the past")
    }

    /// Returns `true` when the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if self.pending.remove(&handle.0) {
            self.stats.cancelled += 1;
            true
        } else {
            false
        }
    }

    /// Dequeues the next live event if its time is `<= t_end`, advancing
    /// the clock to it.
    pub fn next_until(&mut self, t_end: SimTime) -> Option<(SimTime, E)> {
        loop {
            let top = self.queue.peek()?;
            if top.time > t_end {
                return None;
            }
            let Queued { time, seq, event } = self.queue.pop().expect("peeked");
            if !self.pending.remove(&seq) {
                continue;
            }
            self.now = time;
            self.stats.dispatched += 1;
            let mut h = FxHasher::default();
            time.hash(&mut h);
            seq.hash(&mut h);
            event.hash(&mut h);
            self.digest = (self.digest ^ h.finish()).wrapping_mul(0x0000_0100_0000_01b3);
            return Some((time, event));
        }
    }

    /// Moves the clock forward to `t` once every event up to it is done.
    pub fn advance_to(&mut self, t: SimTime) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Dispatches everything up to and including `t_end` to `handler`, then
    /// sets the clock to `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> KernelStats
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        while let Some((t, ev)) = self.next_until(t_end) {
            handler(self, t, ev);
        }
        self.advance_to(t_end);
        self.stats
    }
}
