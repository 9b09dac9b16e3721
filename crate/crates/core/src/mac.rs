//! Broadcast EDCA with two access categories and channel-busy metering.
//!
//! The state machine is event driven: instead of ticking every slot it
//! computes the instant at which the backoff of each access category will
//! expire given the current idle period, and rewinds that computation when
//! the medium turns busy. The owner schedules an access event at
//! [`MacState::take_reschedule`] and hands it back to [`MacState::on_access`].

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::kernel::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessCategory {
    BestEffort,
    Background,
}

impl AccessCategory {
    fn index(self) -> usize {
        match self {
            AccessCategory::BestEffort => 0,
            AccessCategory::Background => 1,
        }
    }

    const BY_PRIORITY: [AccessCategory; 2] = [AccessCategory::BestEffort, AccessCategory::Background];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdcaParams {
    pub aifsn: u32,
    pub cw_min: u32,
    pub cw_max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacConfig {
    pub slot_us: u64,
    pub sifs_us: u64,
    pub best_effort: EdcaParams,
    pub background: EdcaParams,
    pub queue_cap: usize,
    pub cbr_window_ms: u64,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            slot_us: 13,
            sifs_us: 32,
            best_effort: EdcaParams { aifsn: 6, cw_min: 15, cw_max: 1023 },
            background: EdcaParams { aifsn: 9, cw_min: 15, cw_max: 1023 },
            queue_cap: 32,
            cbr_window_ms: 100,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MacError {
    #[error("cw_min {0} exceeds cw_max {1}")]
    ContentionWindow(u32, u32),
    #[error("best effort AIFSN {0} must be below background AIFSN {1}")]
    Priority(u32, u32),
    #[error("slot time and CBR window must be positive")]
    Timing,
    #[error("queue capacity must be positive")]
    QueueCap,
}

impl MacConfig {
    pub fn validate(&self) -> Result<(), MacError> {
        for p in [self.best_effort, self.background] {
            if p.cw_min > p.cw_max {
                return Err(MacError::ContentionWindow(p.cw_min, p.cw_max));
            }
        }
        if self.best_effort.aifsn >= self.background.aifsn {
            return Err(MacError::Priority(self.best_effort.aifsn, self.background.aifsn));
        }
        if self.slot_us == 0 || self.cbr_window_ms == 0 {
            return Err(MacError::Timing);
        }
        if self.queue_cap == 0 {
            return Err(MacError::QueueCap);
        }
        Ok(())
    }

    pub fn params(&self, ac: AccessCategory) -> EdcaParams {
        match ac {
            AccessCategory::BestEffort => self.best_effort,
            AccessCategory::Background => self.background,
        }
    }

    pub fn aifs_us(&self, ac: AccessCategory) -> SimTime {
        self.sifs_us + u64::from(self.params(ac).aifsn) * self.slot_us
    }

    pub fn cbr_window_us(&self) -> SimTime {
        self.cbr_window_ms * 1_000
    }
}

/// Uniform backoff draw over `[0, cw]` slots.
pub fn draw_backoff<R: Rng + ?Sized>(cw: u32, rng: &mut R) -> u32 {
    rng.random_range(0..=cw)
}

#[derive(Debug, Clone)]
struct Queued<T> {
    item: T,
    deadline: SimTime,
}

#[derive(Debug, Clone)]
struct AcState<T> {
    queue: VecDeque<Queued<T>>,
    /// Remaining backoff slots; `Some` while contending.
    backoff: Option<u32>,
    /// Instant the backoff expires if the medium stays idle.
    access_at: Option<SimTime>,
}

impl<T> Default for AcState<T> {
    fn default() -> Self {
        Self { queue: VecDeque::new(), backoff: None, access_at: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacCounters {
    pub enqueued: u64,
    pub overflow_drops: u64,
    pub expired_drops: u64,
    pub transmissions: u64,
    pub internal_collisions: u64,
}

/// What an access attempt produced.
#[derive(Debug, PartialEq)]
pub struct Transmit<T> {
    pub item: T,
    pub ac: AccessCategory,
}

#[derive(Debug, Clone)]
pub struct MacState<T> {
    acs: [AcState<T>; 2],
    cs_busy: bool,
    transmitting: bool,
    busy_since: SimTime,
    idle_since: SimTime,
    scheduled: Option<SimTime>,
    token: u64,
    pub counters: MacCounters,
}

impl<T> Default for MacState<T> {
    fn default() -> Self {
        Self {
            acs: [AcState::default(), AcState::default()],
            cs_busy: false,
            transmitting: false,
            busy_since: 0,
            idle_since: 0,
            scheduled: None,
            token: 0,
            counters: MacCounters::default(),
        }
    }
}

impl<T> MacState<T> {
    pub fn busy(&self) -> bool {
        self.cs_busy || self.transmitting
    }

    pub fn transmitting(&self) -> bool {
        self.transmitting
    }

    pub fn queue_len(&self, ac: AccessCategory) -> usize {
        self.acs[ac.index()].queue.len()
    }

    pub fn backoff(&self, ac: AccessCategory) -> Option<u32> {
        self.acs[ac.index()].backoff
    }

    pub fn access_at(&self, ac: AccessCategory) -> Option<SimTime> {
        self.acs[ac.index()].access_at
    }

    /// Token carried by the most recently requested access event.
    pub fn token(&self) -> u64 {
        self.token
    }

    /// Queues a frame. Returns the frame pushed out by a full queue, if any.
    pub fn enqueue<R: Rng + ?Sized>(
        &mut self,
        now: SimTime,
        item: T,
        deadline: SimTime,
        ac: AccessCategory,
        cfg: &MacConfig,
        rng: &mut R,
    ) -> Option<T> {
        self.counters.enqueued += 1;
        let busy = self.busy();
        let idle_since = self.idle_since;
        let st = &mut self.acs[ac.index()];
        let mut dropped = None;
        if st.queue.len() >= cfg.queue_cap {
            dropped = st.queue.pop_front().map(|q| q.item);
            self.counters.overflow_drops += 1;
        }
        st.queue.push_back(Queued { item, deadline });
        if st.backoff.is_none() && !self.transmitting {
            if busy {
                st.backoff = Some(draw_backoff(cfg.params(ac).cw_min, rng));
            } else {
                st.backoff = Some(0);
                st.access_at = Some(now.max(idle_since + cfg.aifs_us(ac)));
            }
        } else if st.backoff.is_none() {
            // Arrived during our own transmission: contend once it ends.
            st.backoff = Some(draw_backoff(cfg.params(ac).cw_min, rng));
        }
        dropped
    }

    /// Feeds the carrier-sense state of the medium (excluding our own
    /// transmission).
    pub fn set_carrier_sense<R: Rng + ?Sized>(&mut self, now: SimTime, busy: bool, cfg: &MacConfig, rng: &mut R) {
        let before = self.busy();
        self.cs_busy = busy;
        self.transition(now, before, cfg, rng);
    }

    fn transition<R: Rng + ?Sized>(&mut self, now: SimTime, before: bool, cfg: &MacConfig, rng: &mut R) {
        let after = self.busy();
        if before == after {
            return;
        }
        if after {
            self.busy_since = now;
            for ac in AccessCategory::BY_PRIORITY {
                let aifs = cfg.aifs_us(ac);
                let slot = cfg.slot_us;
                let cw_min = cfg.params(ac).cw_min;
                let idle_since = self.idle_since;
                let st = &mut self.acs[ac.index()];
                let (Some(b), Some(at)) = (st.backoff, st.access_at) else { continue };
                if at == now {
                    // Decided in the same instant the medium turned busy:
                    // the attempt goes ahead.
                    continue;
                }
                let countdown_start = idle_since + aifs;
                if now > countdown_start {
                    let done = ((now - countdown_start) / slot) as u32;
                    st.backoff = Some(b - done.min(b));
                } else if b == 0 {
                    st.backoff = Some(draw_backoff(cw_min, rng));
                }
                st.access_at = None;
            }
        } else {
            self.idle_since = now;
            for ac in AccessCategory::BY_PRIORITY {
                let aifs = cfg.aifs_us(ac);
                let st = &mut self.acs[ac.index()];
                if let Some(b) = st.backoff {
                    st.access_at = Some(now + aifs + u64::from(b) * cfg.slot_us);
                }
            }
        }
    }

    /// Earliest pending access instant, if it changed since the last call.
    /// The returned token must come back with the access event.
    pub fn take_reschedule(&mut self) -> Option<(SimTime, u64)> {
        let next = self.acs.iter().filter_map(|s| s.access_at).min();
        if next == self.scheduled {
            return None;
        }
        self.token += 1;
        self.scheduled = next;
        next.map(|t| (t, self.token))
    }

    /// Handles an access event. Returns the frame to put on the air; the
    /// caller must follow up with [`MacState::start_tx`].
    pub fn on_access<R: Rng + ?Sized>(
        &mut self,
        now: SimTime,
        token: u64,
        cfg: &MacConfig,
        rng: &mut R,
    ) -> Option<Transmit<T>> {
        if token != self.token || self.scheduled != Some(now) {
            return None;
        }
        self.scheduled = None;
        if self.transmitting || (self.cs_busy && self.busy_since < now) {
            return None;
        }
        let mut winner = None;
        for ac in AccessCategory::BY_PRIORITY {
            let st = &mut self.acs[ac.index()];
            if st.access_at != Some(now) {
                continue;
            }
            st.access_at = None;
            st.backoff = None;
            while st.queue.front().is_some_and(|q| q.deadline < now) {
                st.queue.pop_front();
                self.counters.expired_drops += 1;
            }
            if st.queue.is_empty() {
                continue;
            }
            if winner.is_none() {
                let q = st.queue.pop_front().expect("non-empty");
                winner = Some(Transmit { item: q.item, ac });
            } else {
                // Lower priority lost the internal contention.
                self.counters.internal_collisions += 1;
                st.backoff = Some(draw_backoff(cfg.params(ac).cw_min, rng));
            }
        }
        if winner.is_some() {
            self.counters.transmissions += 1;
        }
        winner
    }

    pub fn start_tx<R: Rng + ?Sized>(&mut self, now: SimTime, cfg: &MacConfig, rng: &mut R) {
        let before = self.busy();
        self.transmitting = true;
        self.transition(now, before, cfg, rng);
    }

    /// Ends our transmission; queued frames start a fresh backoff.
    pub fn end_tx<R: Rng + ?Sized>(&mut self, now: SimTime, cfg: &MacConfig, rng: &mut R) {
        let before = self.busy();
        self.transmitting = false;
        for ac in AccessCategory::BY_PRIORITY {
            let st = &mut self.acs[ac.index()];
            if !st.queue.is_empty() && st.backoff.is_none() {
                st.backoff = Some(draw_backoff(cfg.params(ac).cw_min, rng));
            }
        }
        self.transition(now, before, cfg, rng);
    }
}

/// Busy time of one node per fixed-length window.
#[derive(Debug, Clone)]
pub struct CbrMeter {
    window_us: SimTime,
    busy_since: Option<SimTime>,
    busy_per_window: Vec<u32>,
}

impl CbrMeter {
    pub fn new(window_us: SimTime) -> Self {
        Self { window_us, busy_since: None, busy_per_window: Vec::new() }
    }

    pub fn mark_busy(&mut self, now: SimTime) {
        if self.busy_since.is_none() {
            self.busy_since = Some(now);
        }
    }

    pub fn mark_idle(&mut self, now: SimTime) {
        if let Some(start) = self.busy_since.take() {
            self.add_interval(start, now);
        }
    }

    fn add_interval(&mut self, mut start: SimTime, end: SimTime) {
        while start < end {
            let w = (start / self.window_us) as usize;
            let w_end = (w as SimTime + 1) * self.window_us;
            let chunk = end.min(w_end) - start;
            if self.busy_per_window.len() <= w {
                self.busy_per_window.resize(w + 1, 0);
            }
            self.busy_per_window[w] += chunk as u32;
            start += chunk;
        }
    }

    /// Closes any open busy period at `t_end` and returns per-window CBR for
    /// the complete windows before `t_end`.
    pub fn finish(&mut self, t_end: SimTime) -> Vec<f64> {
        if let Some(start) = self.busy_since.take() {
            self.add_interval(start, t_end);
            self.busy_since = Some(t_end);
        }
        let n = (t_end / self.window_us) as usize;
        (0..n).map(|w| *self.busy_per_window.get(w).unwrap_or(&0) as f64 / self.window_us as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (MacState<u32>, MacConfig, ChaCha8Rng) {
        (MacState::default(), MacConfig::default(), ChaCha8Rng::seed_from_u64(4))
    }

    #[test]
    fn aifs_values() {
        let cfg = MacConfig::default();
        assert_eq!(cfg.aifs_us(AccessCategory::BestEffort), 110);
        assert_eq!(cfg.aifs_us(AccessCategory::Background), 149);
    }

    #[test]
    fn idle_medium_transmits_at_once() {
        let (mut mac, cfg, mut rng) = setup();
        mac.enqueue(1_000, 7, 100_000, AccessCategory::BestEffort, &cfg, &mut rng);
        let (t, tok) = mac.take_reschedule().unwrap();
        assert_eq!(t, 1_000);
        let tx = mac.on_access(t, tok, &cfg, &mut rng).unwrap();
        assert_eq!(tx, Transmit { item: 7, ac: AccessCategory::BestEffort });
    }

    #[test]
    fn recently_idle_medium_waits_out_aifs() {
        let (mut mac, cfg, mut rng) = setup();
        mac.set_carrier_sense(0, true, &cfg, &mut rng);
        mac.set_carrier_sense(500, false, &cfg, &mut rng);
        mac.enqueue(520, 1, 100_000, AccessCategory::BestEffort, &cfg, &mut rng);
        assert_eq!(mac.take_reschedule().map(|x| x.0), Some(610));
    }

    #[test]
    fn busy_arrival_draws_backoff_and_freezes() {
        let (mut mac, cfg, mut rng) = setup();
        mac.set_carrier_sense(0, true, &cfg, &mut rng);
        mac.enqueue(10, 1, 100_000, AccessCategory::BestEffort, &cfg, &mut rng);
        let b = mac.backoff(AccessCategory::BestEffort).unwrap();
        assert!(b <= 15);
        assert_eq!(mac.take_reschedule(), None);
        mac.set_carrier_sense(1_000, false, &cfg, &mut rng);
        let at = mac.access_at(AccessCategory::BestEffort).unwrap();
        assert_eq!(at, 1_000 + 110 + 13 * u64::from(b));
    }

    #[test]
    fn frozen_backoff_keeps_remaining_slots() {
        let (mut mac, cfg, mut rng) = setup();
        mac.set_carrier_sense(0, true, &cfg, &mut rng);
        // Force a known backoff.
        mac.enqueue(10, 1, 100_000, AccessCategory::BestEffort, &cfg, &mut rng);
        mac.acs[0].backoff = Some(5);
        mac.set_carrier_sense(1_000, false, &cfg, &mut rng);
        // Two full slots after AIFS, then busy mid third slot.
        mac.set_carrier_sense(1_000 + 110 + 26 + 5, true, &cfg, &mut rng);
        assert_eq!(mac.backoff(AccessCategory::BestEffort), Some(3));
        assert_eq!(mac.access_at(AccessCategory::BestEffort), None);
        // Busy during AIFS: remaining stays.
        mac.set_carrier_sense(2_000, false, &cfg, &mut rng);
        mac.set_carrier_sense(2_050, true, &cfg, &mut rng);
        assert_eq!(mac.backoff(AccessCategory::BestEffort), Some(3));
    }

    #[test]
    fn zero_backoff_interrupted_in_aifs_redraws() {
        let (mut mac, cfg, mut rng) = setup();
        mac.set_carrier_sense(0, true, &cfg, &mut rng);
        mac.set_carrier_sense(100, false, &cfg, &mut rng);
        mac.enqueue(150, 1, 100_000, AccessCategory::BestEffort, &cfg, &mut rng);
        assert_eq!(mac.backoff(AccessCategory::BestEffort), Some(0));
        mac.set_carrier_sense(200, true, &cfg, &mut rng);
        assert!(mac.backoff(AccessCategory::BestEffort).is_some());
        assert_eq!(mac.access_at(AccessCategory::BestEffort), None);
    }

    #[test]
    fn attempt_in_same_instant_as_busy_goes_ahead() {
        let (mut mac, cfg, mut rng) = setup();
        mac.enqueue(0, 9, 100_000, AccessCategory::BestEffort, &cfg, &mut rng);
        let (t, tok) = mac.take_reschedule().unwrap();
        mac.set_carrier_sense(t, true, &cfg, &mut rng);
        assert_eq!(mac.take_reschedule(), None);
        assert!(mac.on_access(t, tok, &cfg, &mut rng).is_some());
    }

    #[test]
    fn best_effort_wins_internal_collision() {
        let (mut mac, cfg, mut rng) = setup();
        mac.enqueue(0, 1, 100_000, AccessCategory::Background, &cfg, &mut rng);
        mac.enqueue(0, 2, 100_000, AccessCategory::BestEffort, &cfg, &mut rng);
        // Align both attempts.
        mac.acs[0].access_at = mac.acs[1].access_at;
        let (t, tok) = mac.take_reschedule().unwrap();
        let tx = mac.on_access(t, tok, &cfg, &mut rng).unwrap();
        assert_eq!(tx.ac, AccessCategory::BestEffort);
        assert_eq!(mac.queue_len(AccessCategory::Background), 1);
        assert!(mac.backoff(AccessCategory::Background).is_some());
        assert_eq!(mac.counters.internal_collisions, 1);
    }

    #[test]
    fn stale_token_is_ignored() {
        let (mut mac, cfg, mut rng) = setup();
        mac.enqueue(0, 1, 100_000, AccessCategory::BestEffort, &cfg, &mut rng);
        let (t, tok) = mac.take_reschedule().unwrap();
        assert!(mac.on_access(t, tok + 1, &cfg, &mut rng).is_none());
    }

    #[test]
    fn overflow_drops_oldest() {
        let (mut mac, mut cfg, mut rng) = setup();
        cfg.queue_cap = 2;
        mac.set_carrier_sense(0, true, &cfg, &mut rng);
        assert_eq!(mac.enqueue(0, 1, 1, AccessCategory::BestEffort, &cfg, &mut rng), None);
        assert_eq!(mac.enqueue(0, 2, 1, AccessCategory::BestEffort, &cfg, &mut rng), None);
        assert_eq!(mac.enqueue(0, 3, 1, AccessCategory::BestEffort, &cfg, &mut rng), Some(1));
        assert_eq!(mac.counters.overflow_drops, 1);
    }

    #[test]
    fn expired_frames_are_dropped_at_access() {
        let (mut mac, cfg, mut rng) = setup();
        mac.set_carrier_sense(0, true, &cfg, &mut rng);
        mac.enqueue(0, 1, 50, AccessCategory::BestEffort, &cfg, &mut rng);
        mac.set_carrier_sense(1_000, false, &cfg, &mut rng);
        let (t, tok) = mac.take_reschedule().unwrap();
        assert!(mac.on_access(t, tok, &cfg, &mut rng).is_none());
        assert_eq!(mac.counters.expired_drops, 1);
        assert_eq!(mac.take_reschedule(), None);
    }

    #[test]
    fn post_transmission_backoff_for_queued_frames() {
        let (mut mac, cfg, mut rng) = setup();
        mac.enqueue(0, 1, 100_000, AccessCategory::BestEffort, &cfg, &mut rng);
        mac.enqueue(0, 2, 100_000, AccessCategory::BestEffort, &cfg, &mut rng);
        let (t, tok) = mac.take_reschedule().unwrap();
        mac.on_access(t, tok, &cfg, &mut rng).unwrap();
        mac.start_tx(t, &cfg, &mut rng);
        assert_eq!(mac.take_reschedule(), None);
        mac.end_tx(488, &cfg, &mut rng);
        let b = mac.backoff(AccessCategory::BestEffort).unwrap();
        assert_eq!(mac.take_reschedule().map(|x| x.0), Some(488 + 110 + 13 * u64::from(b)));
    }

    #[test]
    fn cbr_meter_splits_windows() {
        let mut m = CbrMeter::new(100_000);
        m.mark_busy(99_000);
        m.mark_idle(101_000);
        m.mark_busy(150_000);
        m.mark_busy(150_500);
        m.mark_idle(150_488);
        let cbr = m.finish(300_000);
        assert_eq!(cbr.len(), 3);
        assert!((cbr[0] - 0.01).abs() < 1e-12);
        assert!((cbr[1] - 0.01488).abs() < 1e-12);
        assert_eq!(cbr[2], 0.0);
    }

    #[test]
    fn single_cam_window() {
        let mut m = CbrMeter::new(100_000);
        m.mark_busy(10_000);
        m.mark_idle(10_488);
        assert!((m.finish(100_000)[0] - 0.00488).abs() < 1e-12);
    }
}
