//! Per-neighbour transmission predictor of the learning node.
//!
//! A [`MainPredictor`] keeps one [`SubPredictor`] per tracked neighbour.
//! Each sub-predictor runs one recurrent net per packet type and remembers
//! when it expects that neighbour's next packet of that type.

use std::sync::Arc;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use v2x_nn::{LstmState, MinMaxScaler, NnError, RecurrentNet, WeightFile};

use crate::apps::{Dynamics, PacketType};
use crate::kernel::{SimTime, MICROS_PER_MS, MICROS_PER_SEC};
use crate::mobility::{signed_displacement, MobilityConfig, NodeId};
use crate::piggyback::loss_corrected_gap;
use crate::scheduler::NeighborClass;

/// Which network a packet is fed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetKind {
    /// CAMs heard directly: interval plus sender kinematics.
    Cam,
    /// CAMs known only from reception reports: interval alone.
    CamInterval,
    Cpm,
    Ldm,
}

impl NetKind {
    pub const ALL: [NetKind; 4] = [NetKind::Cam, NetKind::CamInterval, NetKind::Cpm, NetKind::Ldm];

    pub fn name(self) -> &'static str {
        match self {
            NetKind::Cam => "cam",
            NetKind::CamInterval => "cam_interval",
            NetKind::Cpm => "cpm",
            NetKind::Ldm => "ldm",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn input_width(self) -> usize {
        match self {
            NetKind::Cam => 7,
            _ => 1,
        }
    }

    pub fn for_packet(ptype: PacketType, with_dynamics: bool) -> Self {
        match ptype {
            PacketType::Cam if with_dynamics => NetKind::Cam,
            PacketType::Cam => NetKind::CamInterval,
            PacketType::Cpm => NetKind::Cpm,
            PacketType::Ldm => NetKind::Ldm,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

fn heading_delta(cur: f64, prev: f64) -> f64 {
    let d = (cur - prev).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Raw (unscaled) input vector for one packet.
///
/// `dt_prev_s` is the gap to the previous packet of the same type. For
/// [`NetKind::Cam`] the kinematics of this and the previous packet are
/// required; the other kinds ignore them.
pub fn features(
    kind: NetKind,
    dt_prev_s: f64,
    cur: Option<Dynamics>,
    prev: Option<Dynamics>,
    mob: &MobilityConfig,
) -> Vec<f64> {
    match (kind, cur, prev) {
        (NetKind::Cam, Some(c), Some(p)) => vec![
            dt_prev_s,
            c.speed,
            c.heading,
            c.x,
            c.speed - p.speed,
            heading_delta(c.heading, p.heading),
            signed_displacement(p.x, c.x, mob),
        ],
        (NetKind::Cam, Some(c), None) => vec![dt_prev_s, c.speed, c.heading, c.x, 0.0, 0.0, 0.0],
        (NetKind::Cam, None, _) => vec![dt_prev_s, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        _ => vec![dt_prev_s],
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error(transparent)]
    Net(#[from] NnError),
    #[error("weight file model '{name}' has {got} inputs, expected {expected}")]
    InputWidth { name: String, expected: usize, got: usize },
    #[error("weight file has no model named '{0}'")]
    MissingModel(String),
    #[error("weight file marks every model untrained; a learned predictor needs at least one trained net")]
    NothingTrained,
}

/// One trained network with its frozen scaling.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: RecurrentNet,
    pub input_scaler: MinMaxScaler,
    pub target_scaler: MinMaxScaler,
}

impl Model {
    /// Feeds one raw feature vector; returns the predicted interval in
    /// seconds, clamped below at `floor_s`.
    pub fn step(&self, state: &mut LstmState, raw: &[f64], floor_s: f64) -> Result<f64, NnError> {
        let x = self.input_scaler.scale(raw);
        let y = self.net.step(state, &x)?;
        Ok(self.target_scaler.unscale_component(0, y).max(floor_s))
    }
}

/// The per-kind networks; `None` falls back to interval persistence.
#[derive(Debug, Clone, Default)]
pub struct Models {
    nets: [Option<Model>; 4],
}

impl Models {
    pub fn baseline() -> Self {
        Self::default()
    }

    pub fn get(&self, kind: NetKind) -> Option<&Model> {
        self.nets[kind.index()].as_ref()
    }

    pub fn set(&mut self, kind: NetKind, model: Option<Model>) {
        self.nets[kind.index()] = model;
    }

    pub fn trained_count(&self) -> usize {
        self.nets.iter().filter(|m| m.is_some()).count()
    }

    pub fn from_weight_file(file: &WeightFile) -> Result<Self, PredictorError> {
        let mut out = Self::default();
        for kind in NetKind::ALL {
            let m = file.model(kind.name()).ok_or_else(|| PredictorError::MissingModel(kind.name().into()))?;
            if m.arch.inputs != kind.input_width() {
                return Err(PredictorError::InputWidth {
                    name: kind.name().into(),
                    expected: kind.input_width(),
                    got: m.arch.inputs,
                });
            }
            if let Some(net) = &m.net {
                out.set(
                    kind,
                    Some(Model {
                        net: net.clone(),
                        input_scaler: m.input_scaler.clone(),
                        target_scaler: MinMaxScaler::new(vec![m.target_range.0], vec![m.target_range.1]),
                    }),
                );
            }
        }
        if out.trained_count() == 0 {
            return Err(PredictorError::NothingTrained);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Lstm,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub ttl_ms: u64,
    pub inquiry_period_ms: u64,
    /// Lower clamp of any predicted interval.
    pub min_interval_ms: f64,
    /// A report of a hidden transmission within this distance of the last
    /// known one is treated as the same transmission.
    pub duplicate_window_ms: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::Lstm,
            ttl_ms: 1500,
            inquiry_period_ms: 100,
            min_interval_ms: 1.0,
            duplicate_window_ms: 10,
        }
    }
}

/// A packet seen by the learning node, directly or through a report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub neighbor: NodeId,
    pub ptype: PacketType,
    /// Transmission start (direct) or reconstructed transmission time.
    pub t: SimTime,
    /// Sender kinematics; only direct CAMs carry them.
    pub dynamics: Option<Dynamics>,
    /// Interval reported by a third party (hidden neighbours).
    pub reported_interval: Option<SimTime>,
}

#[derive(Debug, Clone, Default)]
struct TypeState {
    kind: Option<NetKind>,
    lstm: Option<LstmState>,
    last_t: Option<SimTime>,
    last_dyn: Option<Dynamics>,
    last_dt: Option<SimTime>,
    interval: Option<SimTime>,
    next: Option<SimTime>,
}

#[derive(Debug, Clone)]
pub struct SubPredictor {
    pub neighbor: NodeId,
    pub class: NeighborClass,
    types: [TypeState; 3],
    pub ttl_expiry: SimTime,
}

impl SubPredictor {
    pub fn new(neighbor: NodeId, class: NeighborClass, ttl_expiry: SimTime) -> Self {
        Self { neighbor, class, types: Default::default(), ttl_expiry }
    }

    /// Next expected transmission of `ptype`, if any.
    pub fn predicted_next(&self, ptype: PacketType) -> Option<SimTime> {
        self.types[ptype.code() as usize].next
    }

    pub fn predicted_interval(&self, ptype: PacketType) -> Option<SimTime> {
        self.types[ptype.code() as usize].interval
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimelineEntry {
    pub neighbor: NodeId,
    pub ptype: PacketType,
    pub predicted_tx: SimTime,
    pub air_time: SimTime,
    pub class: NeighborClass,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictedTimeline {
    pub window_start: SimTime,
    pub window_end: SimTime,
    pub entries: Vec<TimelineEntry>,
}

pub struct MainPredictor {
    models: Arc<Models>,
    kind: PredictorKind,
    cfg: PredictorConfig,
    mob: MobilityConfig,
    subs: FxHashMap<NodeId, SubPredictor>,
}

impl MainPredictor {
    pub fn new(models: Arc<Models>, kind: PredictorKind, cfg: PredictorConfig, mob: MobilityConfig) -> Self {
        Self { models, kind, cfg, mob, subs: FxHashMap::default() }
    }

    pub fn len(&self) -> usize {
        self.subs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subs.is_empty()
    }

    pub fn get(&self, neighbor: NodeId) -> Option<&SubPredictor> {
        self.subs.get(&neighbor)
    }

    pub fn ttl(&self) -> SimTime {
        self.cfg.ttl_ms * MICROS_PER_MS
    }

    /// Ensures a sub-predictor exists for `neighbor`.
    pub fn track(&mut self, neighbor: NodeId, class: NeighborClass, now: SimTime) {
        let ttl = self.ttl();
        let sub = self.subs.entry(neighbor).or_insert_with(|| SubPredictor::new(neighbor, class, now + ttl));
        sub.class = class;
    }

    /// Drops every sub-predictor for which `keep` is false.
    pub fn retain<F: FnMut(NodeId) -> bool>(&mut self, mut keep: F) {
        self.subs.retain(|&id, _| keep(id));
    }

    /// Deletes sub-predictors whose time-to-live ran out.
    pub fn expire(&mut self, now: SimTime) {
        self.subs.retain(|_, s| s.ttl_expiry >= now);
    }

    /// Feeds a packet to its neighbour's sub-predictor (if tracked) and
    /// returns the updated prediction of that neighbour's next packet of
    /// the same type.
    pub fn on_packet(&mut self, obs: &Observation, now: SimTime) -> Result<Option<SimTime>, PredictorError> {
        let ttl = self.ttl();
        let floor_s = self.cfg.min_interval_ms / 1e3;
        let dup = self.cfg.duplicate_window_ms * MICROS_PER_MS;
        let Some(sub) = self.subs.get_mut(&obs.neighbor) else { return Ok(None) };
        let st = &mut sub.types[obs.ptype.code() as usize];
        if obs.reported_interval.is_some() || obs.dynamics.is_none() {
            if st.last_t.is_some_and(|last| obs.t <= last + dup) {
                return Ok(st.next);
            }
        } else if st.last_t.is_some_and(|last| obs.t <= last) {
            return Ok(st.next);
        }
        sub.ttl_expiry = now + ttl;

        let kind = NetKind::for_packet(obs.ptype, obs.dynamics.is_some());
        if st.kind != Some(kind) {
            // The evidence source changed; start a fresh sequence.
            st.kind = Some(kind);
            st.lstm = None;
        }
        let dt_prev = match (obs.reported_interval.filter(|&i| i > 0), st.last_t) {
            (Some(i), _) => Some(i),
            (None, Some(last)) => Some(loss_corrected_gap(obs.t - last, st.last_dt)),
            (None, None) => None,
        };
        let prev_dyn = st.last_dyn;
        st.last_t = Some(obs.t);
        if dt_prev.is_some() {
            st.last_dt = dt_prev;
        }
        st.last_dyn = obs.dynamics;
        let Some(dt_prev) = dt_prev else {
            st.next = None;
            return Ok(None);
        };
        let model = match self.kind {
            PredictorKind::Lstm => self.models.get(kind),
            PredictorKind::Baseline => None,
        };
        let interval = match model {
            Some(model) => {
                let raw = features(kind, dt_prev as f64 / MICROS_PER_SEC as f64, obs.dynamics, prev_dyn, &self.mob);
                let state = st.lstm.get_or_insert_with(|| model.net.initial_state());
                let secs = model.step(state, &raw, floor_s)?;
                (secs * MICROS_PER_SEC as f64).round() as SimTime
            }
            None => dt_prev,
        };
        let interval = interval.max((floor_s * MICROS_PER_SEC as f64) as SimTime);
        st.interval = Some(interval);
        st.next = Some(obs.t + interval);
        Ok(st.next)
    }

    /// Predicted transmissions overlapping `[window_start, window_start + len)`
    /// of every tracked neighbour, sorted by time. Predictions of periodic
    /// types that ended before the window are rolled forward by whole
    /// intervals.
    pub fn inquire<F>(&self, window_start: SimTime, len: SimTime, airtime: F) -> PredictedTimeline
    where
        F: Fn(PacketType) -> SimTime,
    {
        let window_end = window_start + len;
        let mut entries = Vec::new();
        for sub in self.subs.values() {
            for ptype in PacketType::ALL {
                let st = &sub.types[ptype.code() as usize];
                let (Some(mut next), Some(interval)) = (st.next, st.interval) else { continue };
                let air = airtime(ptype);
                // An occurrence still on air at the window start stays in.
                if next + air <= window_start {
                    if !ptype.is_periodic() {
                        continue;
                    }
                    let behind = window_start - (next + air) + 1;
                    next += behind.div_ceil(interval) * interval;
                }
                if next < window_end {
                    entries.push(TimelineEntry {
                        neighbor: sub.neighbor,
                        ptype,
                        predicted_tx: next,
                        air_time: air,
                        class: sub.class,
                    });
                }
            }
        }
        entries.sort_by_key(|e| (e.predicted_tx, e.neighbor, e.ptype));
        PredictedTimeline { window_start, window_end, entries }
    }
}
