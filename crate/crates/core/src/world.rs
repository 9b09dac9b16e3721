//! One simulation run: vehicles, radios, MAC, applications and the
//! learning node, driven by the event kernel.
//!
//! Positions change only at mobility ticks; a frame keeps the receiver set
//! and powers computed at its start for its whole duration.

use std::sync::Arc;

use rand::Rng;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::apps::{assign_deadline, cpm_capable, CamTriggerState, CpmBurstState, Dynamics, PacketType};
use crate::config::{ConfigError, ScenarioConfig};
use crate::kernel::{Kernel, KernelError, KernelStats, SimTime, MICROS_PER_MS};
use crate::mac::{CbrMeter, MacCounters, MacState};
use crate::metrics::{mean_channel_load, CbrSample, MobilitySample, PredictionError, PrrHistogram, SchedulingRecord};
use crate::mobility::{self, in_measured_region, pick_learning_node, Boundary, NodeId, VehicleState};
use crate::packet_log::PacketRecord;
use crate::phy::{airtime_us, LinkBudget, PowerZw, ReceptionOutcome};
use crate::piggyback::{self, ReceptionHistory, ENTRY_BYTES};
use crate::predictor::{MainPredictor, Models, Observation, PredictorError};
use crate::rng::{stream, SimRng, Stream};
use crate::scheduler::{classify_and_select, find_gap, Busy, Evidence, LearningMode, NeighborClass};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error("learning mode '{0}' needs a trained weight file")]
    MissingWeights(LearningMode),
    #[error("no vehicle can serve as the learning node")]
    NoLearningNode,
    #[error("invalid vehicle placement: {0}")]
    Placement(String),
}

/// Optional per-run outputs that cost memory.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub packet_log: bool,
    pub cbr_series: bool,
    pub mobility_trace: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub learning_node: NodeId,
    pub prr: PrrHistogram,
    /// Mean CBR over measured nodes and post-warm-up windows.
    pub mean_cbr: f64,
    pub frames_sent: u64,
    pub learning_frames: u64,
    pub receptions: u64,
    pub collisions: u64,
    pub no_gap_events: u64,
    pub malformed_piggyback: u64,
    /// Learning-node inquiries after warm-up, with the summed sizes of the
    /// tracked set and of the predicted timelines they returned.
    pub inquiries: u64,
    pub tracked_total: u64,
    pub timeline_total: u64,
    pub mac: MacCounters,
    pub kernel: KernelStats,
    pub digest: u64,
    pub scheduling: Vec<SchedulingRecord>,
    pub prediction_errors: Vec<PredictionError>,
    pub packet_log: Vec<PacketRecord>,
    pub cbr_series: Vec<CbrSample>,
    pub mobility_trace: Vec<MobilitySample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Event {
    MobilityTick,
    AppCheck(NodeId),
    LdmTick(NodeId),
    Generate {
        node: NodeId,
        ptype: PacketType,
    },
    /// A deferred packet of the learning node reaches the MAC.
    Release {
        ptype: PacketType,
        deadline: SimTime,
    },
    Access {
        node: NodeId,
        token: u64,
    },
    FrameEnd(usize),
}

#[derive(Debug, Clone)]
struct Pending {
    ptype: PacketType,
    payload_bytes: u32,
    piggyback: Vec<u8>,
    generated_at: SimTime,
    dynamics: Dynamics,
}

#[derive(Debug, Clone, Copy)]
struct Reach {
    node: NodeId,
    power: PowerZw,
    distance: f32,
}

#[derive(Debug)]
struct Frame {
    sender: NodeId,
    tx_start: SimTime,
    pending: Pending,
    reach: Vec<Reach>,
}

#[derive(Debug, Clone, Copy)]
struct Incoming {
    slot: usize,
    power: PowerZw,
    end: SimTime,
    max_interferer: PowerZw,
    doomed: bool,
}

struct Node {
    mac: MacState<Pending>,
    incoming: Vec<Incoming>,
    cs_total: PowerZw,
    cs_busy: bool,
    cbr: CbrMeter,
    history: ReceptionHistory,
    cam: CamTriggerState,
    cpm: CpmBurstState,
    cpm_capable: bool,
}

struct Learner {
    id: NodeId,
    mode: LearningMode,
    evidence: FxHashMap<NodeId, Evidence>,
    predictor: Option<MainPredictor>,
    busy: Vec<Busy>,
    window_end: SimTime,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    opts: RunOptions,
    kernel: Kernel<Event>,
    budget: LinkBudget,
    vehicles: Vec<VehicleState>,
    nodes: Vec<Node>,
    frames: Vec<Option<Frame>>,
    free_slots: Vec<usize>,
    learner: Learner,
    rng_mobility: SimRng,
    rng_mac: SimRng,
    rng_cam: SimRng,
    rng_cpm: SimRng,
    rng_ldm: SimRng,
    cpm_onset: f64,
    nominal_air: [SimTime; 3],
    warmup: SimTime,
    out: RunMetrics,
}

impl Simulation {
    pub fn new(
        cfg: &ScenarioConfig,
        seed: u64,
        models: Option<Arc<Models>>,
        opts: RunOptions,
    ) -> Result<Self, WorldError> {
        cfg.validate()?;
        let eff = cfg.effective();
        let mut rng_mobility = stream(seed, Stream::Mobility);
        let vehicles = mobility::spawn_scenario(&eff.mobility, &mut rng_mobility);
        let ln = pick_learning_node(&vehicles, &eff.mobility).ok_or(WorldError::NoLearningNode)?;
        Self::build(eff, seed, vehicles, ln, rng_mobility, models, opts)
    }

    /// A run over hand-placed vehicles. Ids must equal positions in
    /// `vehicles`; the traffic preset still sets speed bounds and
    /// generators, but the given states are used as they are.
    pub fn with_vehicles(
        cfg: &ScenarioConfig,
        seed: u64,
        vehicles: Vec<VehicleState>,
        learning_node: NodeId,
        models: Option<Arc<Models>>,
        opts: RunOptions,
    ) -> Result<Self, WorldError> {
        cfg.validate()?;
        if let Some((i, v)) = vehicles.iter().enumerate().find(|(i, v)| v.id as usize != *i) {
            return Err(WorldError::Placement(format!("vehicle at index {i} has id {}", v.id)));
        }
        if learning_node as usize >= vehicles.len() {
            return Err(WorldError::NoLearningNode);
        }
        let eff = cfg.effective();
        let rng_mobility = stream(seed, Stream::Mobility);
        Self::build(eff, seed, vehicles, learning_node, rng_mobility, models, opts)
    }

    fn build(
        cfg: ScenarioConfig,
        seed: u64,
        vehicles: Vec<VehicleState>,
        ln: NodeId,
        rng_mobility: SimRng,
        models: Option<Arc<Models>>,
        opts: RunOptions,
    ) -> Result<Self, WorldError> {
        let mut rng_cam = stream(seed, Stream::Cam);
        let mut rng_ldm = stream(seed, Stream::Ldm);

        let predictor = match (cfg.mode, cfg.predictor.kind, models) {
            (LearningMode::None, _, _) => None,
            (_, crate::predictor::PredictorKind::Lstm, None) => return Err(WorldError::MissingWeights(cfg.mode)),
            (_, kind, models) => Some(MainPredictor::new(
                models.unwrap_or_else(|| Arc::new(Models::baseline())),
                kind,
                cfg.predictor.clone(),
                cfg.mobility.clone(),
            )),
        };

        let budget_entries = cfg.scheduler.piggyback_budget;
        let nodes = vehicles
            .iter()
            .map(|v| Node {
                mac: MacState::default(),
                incoming: Vec::new(),
                cs_total: 0,
                cs_busy: false,
                cbr: CbrMeter::new(cfg.mac.cbr_window_us()),
                history: ReceptionHistory::new(budget_entries),
                cam: CamTriggerState::default(),
                cpm: CpmBurstState::default(),
                // The learning node always runs every generator of the
                // scenario so its own traffic mix is the one under study.
                cpm_capable: v.id == ln || cpm_capable(v.id, seed, cfg.apps.cpm_capable_fraction),
            })
            .collect();

        let mut kernel = Kernel::new();
        kernel.schedule(0, Event::MobilityTick)?;
        let check = cfg.apps.check_period_us();
        for v in &vehicles {
            kernel.schedule(rng_cam.random_range(0..check), Event::AppCheck(v.id))?;
        }
        if cfg.apps.ldm_enabled {
            let period = cfg.apps.ldm_period_ms * MICROS_PER_MS;
            for v in &vehicles {
                kernel.schedule(rng_ldm.random_range(0..period), Event::LdmTick(v.id))?;
            }
        }

        let nominal_air = PacketType::ALL.map(|t| {
            let extra = if t == PacketType::Cam { budget_entries * ENTRY_BYTES } else { 0 };
            airtime_us(cfg.apps.payload_bytes(t) + extra as u32, &cfg.phy)
        });
        let bins = cfg.metrics.bins();
        let out = RunMetrics {
            seed,
            learning_node: ln,
            prr: PrrHistogram::new(cfg.metrics.bin_width_m, bins),
            ..Default::default()
        };
        Ok(Self {
            budget: LinkBudget::new(&cfg.phy),
            cpm_onset: cfg.apps.cpm_onset_probability(),
            warmup: cfg.metrics.warmup_us(),
            learner: Learner {
                id: ln,
                mode: cfg.mode,
                evidence: FxHashMap::default(),
                predictor,
                busy: Vec::new(),
                window_end: 0,
            },
            cfg,
            opts,
            kernel,
            vehicles,
            nodes,
            frames: Vec::new(),
            free_slots: Vec::new(),
            rng_mobility,
            rng_mac: stream(seed, Stream::Mac),
            rng_cam,
            rng_cpm: stream(seed, Stream::Cpm),
            rng_ldm,
            nominal_air,
            out,
        })
    }

    pub fn learning_node(&self) -> NodeId {
        self.learner.id
    }

    pub fn vehicles(&self) -> &[VehicleState] {
        &self.vehicles
    }

    /// Runs to the configured duration and returns the metrics.
    pub fn run(mut self) -> Result<RunMetrics, WorldError> {
        let t_end = self.cfg.duration_us();
        while let Some((now, ev)) = self.kernel.next_until(t_end) {
            self.dispatch(now, ev)?;
        }
        self.kernel.advance_to(t_end);
        Ok(self.finish(t_end))
    }

    fn dispatch(&mut self, now: SimTime, ev: Event) -> Result<(), WorldError> {
        match ev {
            Event::MobilityTick => self.on_mobility_tick(now)?,
            Event::AppCheck(node) => self.on_app_check(now, node)?,
            Event::LdmTick(node) => {
                let jitter = self.draw_jitter(PacketType::Ldm);
                self.kernel.schedule(now + jitter, Event::Generate { node, ptype: PacketType::Ldm })?;
                self.kernel.schedule(now + self.cfg.apps.ldm_period_ms * MICROS_PER_MS, Event::LdmTick(node))?;
            }
            Event::Generate { node, ptype } => self.on_generate(now, node, ptype)?,
            Event::Release { ptype, deadline } => {
                let ln = self.learner.id;
                self.enqueue(now, ln, ptype, deadline)?;
            }
            Event::Access { node, token } => self.on_access(now, node, token)?,
            Event::FrameEnd(slot) => self.on_frame_end(now, slot)?,
        }
        Ok(())
    }

    fn on_mobility_tick(&mut self, now: SimTime) -> Result<(), WorldError> {
        if now > 0 {
            for v in &mut self.vehicles {
                *v = mobility::step(v, &self.cfg.mobility, &mut self.rng_mobility);
            }
        }
        if self.opts.mobility_trace {
            self.out.mobility_trace.extend(self.vehicles.iter().map(|v| MobilitySample {
                t_us: now,
                node: v.id,
                lane: v.lane,
                x: v.x,
                y: v.y,
                speed: v.speed,
                heading: v.heading,
            }));
        }
        self.kernel.schedule(now + self.cfg.mobility.sampling_period_us(), Event::MobilityTick)?;
        Ok(())
    }

    fn dynamics(&self, node: NodeId) -> Dynamics {
        let v = &self.vehicles[node as usize];
        Dynamics { x: v.x, heading: v.heading, speed: v.speed }
    }

    fn draw_jitter(&mut self, ptype: PacketType) -> SimTime {
        let j = self.cfg.apps.jitter_us;
        if j == 0 {
            return 0;
        }
        let rng = match ptype {
            PacketType::Cam => &mut self.rng_cam,
            PacketType::Cpm => &mut self.rng_cpm,
            PacketType::Ldm => &mut self.rng_ldm,
        };
        rng.random_range(0..j)
    }

    fn on_app_check(&mut self, now: SimTime, node: NodeId) -> Result<(), WorldError> {
        if node == self.learner.id && self.learner.predictor.is_some() {
            self.inquire(now);
        }
        let dyn_now = self.dynamics(node);
        let n = &mut self.nodes[node as usize];
        if n.cam.check(self.cfg.apps.cam_mode, now, dyn_now, &self.cfg.apps, &self.cfg.mobility) {
            let t = now + self.draw_jitter(PacketType::Cam);
            self.kernel.schedule(t, Event::Generate { node, ptype: PacketType::Cam })?;
        }
        let n = &mut self.nodes[node as usize];
        if self.cfg.apps.cpm_enabled
            && n.cpm_capable
            && n.cpm.tick(self.cpm_onset, self.cfg.apps.cpm_burst_frames, &mut self.rng_cpm)
        {
            let t = now + self.draw_jitter(PacketType::Cpm);
            self.kernel.schedule(t, Event::Generate { node, ptype: PacketType::Cpm })?;
        }
        self.kernel.schedule(now + self.cfg.apps.check_period_us(), Event::AppCheck(node))?;
        Ok(())
    }

    /// The learning node's periodic inquiry: refresh the tracked set and
    /// pull the predicted busy intervals of the next window.
    fn inquire(&mut self, now: SimTime) {
        let ttl = self.cfg.predictor.ttl_ms * MICROS_PER_MS;
        let window = self.cfg.predictor.inquiry_period_ms * MICROS_PER_MS;
        let l = &mut self.learner;
        let Some(pred) = l.predictor.as_mut() else { return };
        l.evidence.retain(|_, e| e.classify(now, ttl).is_some());
        let mut evidence: Vec<Evidence> = l.evidence.values().copied().collect();
        evidence.sort_unstable_by_key(|e| e.id);
        pred.expire(now);
        let mut incumbents = FxHashSet::default();
        pred.retain(|id| {
            incumbents.insert(id);
            true
        });
        let selected = classify_and_select(&evidence, now, ttl, self.cfg.scheduler.tracking_cap, l.mode, &incumbents);
        let keep: FxHashSet<NodeId> = selected.iter().map(|s| s.0).collect();
        pred.retain(|id| keep.contains(&id));
        for (id, class) in selected {
            pred.track(id, class, now);
        }
        let air = self.nominal_air;
        let timeline = pred.inquire(now, window, |t| air[t.code() as usize]);
        l.busy = timeline
            .entries
            .iter()
            .filter(|e| l.mode.admits(e.class))
            .map(|e| Busy { start: e.predicted_tx, air: e.air_time })
            .collect();
        l.window_end = timeline.window_end;
        if now >= self.warmup {
            self.out.inquiries += 1;
            self.out.tracked_total += pred.len() as u64;
            self.out.timeline_total += l.busy.len() as u64;
        }
    }

    fn on_generate(&mut self, now: SimTime, node: NodeId, ptype: PacketType) -> Result<(), WorldError> {
        let req = assign_deadline(node, ptype, now, &self.cfg.apps);
        if node != self.learner.id || self.learner.mode == LearningMode::None {
            return self.enqueue(now, node, ptype, req.deadline);
        }
        let own_air = self.nominal_air[ptype.code() as usize];
        let window_end = self.learner.window_end.max(now);
        let gap = find_gap(&self.learner.busy, now, req.deadline, window_end, own_air, self.cfg.scheduler.guard_us);
        if gap.no_gap {
            self.out.no_gap_events += 1;
        }
        if now >= self.warmup {
            self.out.scheduling.push(SchedulingRecord {
                t_us: now,
                ptype,
                deferred_by_us: gap.deferred_by,
                predicted_overlap_us: gap.predicted_overlap_us,
                no_gap_flag: u8::from(gap.no_gap),
            });
        }
        if gap.chosen_tx == now {
            self.enqueue(now, node, ptype, req.deadline)
        } else {
            self.kernel.schedule(gap.chosen_tx, Event::Release { ptype, deadline: req.deadline })?;
            Ok(())
        }
    }

    fn enqueue(&mut self, now: SimTime, node: NodeId, ptype: PacketType, deadline: SimTime) -> Result<(), WorldError> {
        let budget = self.cfg.scheduler.piggyback_budget;
        let dynamics = self.dynamics(node);
        let n = &mut self.nodes[node as usize];
        let piggyback = if ptype == PacketType::Cam && budget > 0 {
            piggyback::encode(&n.history.report(now, budget))
        } else {
            Vec::new()
        };
        let pending = Pending {
            ptype,
            payload_bytes: self.cfg.apps.payload_bytes(ptype),
            piggyback,
            generated_at: now,
            dynamics,
        };
        let was_busy = n.mac.busy();
        n.mac.enqueue(now, pending, deadline, ptype.access_category(), &self.cfg.mac, &mut self.rng_mac);
        debug_assert_eq!(was_busy, n.mac.busy());
        self.reschedule_access(node)
    }

    fn reschedule_access(&mut self, node: NodeId) -> Result<(), WorldError> {
        if let Some((t, token)) = self.nodes[node as usize].mac.take_reschedule() {
            self.kernel.schedule(t, Event::Access { node, token })?;
        }
        Ok(())
    }

    fn on_access(&mut self, now: SimTime, node: NodeId, token: u64) -> Result<(), WorldError> {
        let n = &mut self.nodes[node as usize];
        let tx = n.mac.on_access(now, token, &self.cfg.mac, &mut self.rng_mac);
        let Some(tx) = tx else {
            return self.reschedule_access(node);
        };
        n.mac.start_tx(now, &self.cfg.mac, &mut self.rng_mac);
        n.cbr.mark_busy(now);
        for inc in &mut n.incoming {
            inc.doomed = true;
        }
        self.reschedule_access(node)?;
        self.start_frame(now, node, tx.item)
    }

    fn start_frame(&mut self, now: SimTime, sender: NodeId, pending: Pending) -> Result<(), WorldError> {
        let bytes = pending.payload_bytes + pending.piggyback.len() as u32;
        let air = airtime_us(bytes, &self.cfg.phy);
        let end = now + air;
        self.out.frames_sent += 1;
        if sender == self.learner.id && now >= self.warmup {
            self.out.learning_frames += 1;
        }
        if self.opts.packet_log {
            self.out.packet_log.push(PacketRecord {
                t_us: now,
                sender,
                ptype: pending.ptype,
                payload: bytes,
                speed: pending.dynamics.speed,
                heading: pending.dynamics.heading,
                x: pending.dynamics.x,
            });
        }
        let slot = match self.free_slots.pop() {
            Some(s) => s,
            None => {
                self.frames.push(None);
                self.frames.len() - 1
            }
        };

        let tx = &self.vehicles[sender as usize];
        let (sx, sy) = (tx.x, tx.y);
        let seg = self.cfg.mobility.segment_length_m;
        let wrap = self.cfg.mobility.boundary == Boundary::Wrap;
        let r2_max = self.budget.cutoff_range_m * self.budget.cutoff_range_m;
        let mut reach = Vec::new();
        for v in &self.vehicles {
            if v.id == sender {
                continue;
            }
            let mut dx = (v.x - sx).abs();
            if wrap && dx > seg - dx {
                dx = seg - dx;
            }
            let dy = v.y - sy;
            let d2 = dx * dx + dy * dy;
            if d2 > r2_max {
                continue;
            }
            let power = self.budget.power_zw_sq(d2);
            if power < self.budget.cutoff_zw {
                continue;
            }
            reach.push(Reach { node: v.id, power, distance: d2.sqrt() as f32 });
        }

        for r in &reach {
            let n = &mut self.nodes[r.node as usize];
            let mut strongest = 0;
            for inc in &mut n.incoming {
                if inc.end > now {
                    strongest = strongest.max(inc.power);
                    inc.max_interferer = inc.max_interferer.max(r.power);
                }
            }
            n.incoming.push(Incoming {
                slot,
                power: r.power,
                end,
                max_interferer: strongest,
                doomed: n.mac.transmitting(),
            });
            n.cs_total += r.power;
            self.update_carrier_sense(now, r.node)?;
        }
        self.frames[slot] = Some(Frame { sender, tx_start: now, pending, reach });
        self.kernel.schedule(end, Event::FrameEnd(slot))?;
        Ok(())
    }

    fn update_carrier_sense(&mut self, now: SimTime, node: NodeId) -> Result<(), WorldError> {
        let n = &mut self.nodes[node as usize];
        let busy = self.budget.carrier_sensed(n.cs_total);
        if busy == n.cs_busy {
            return Ok(());
        }
        n.cs_busy = busy;
        n.mac.set_carrier_sense(now, busy, &self.cfg.mac, &mut self.rng_mac);
        if n.mac.busy() {
            n.cbr.mark_busy(now);
        } else {
            n.cbr.mark_idle(now);
        }
        self.reschedule_access(node)
    }

    fn on_frame_end(&mut self, now: SimTime, slot: usize) -> Result<(), WorldError> {
        let frame = self.frames[slot].take().expect("frame in flight");
        self.free_slots.push(slot);
        let sender = frame.sender;
        {
            let n = &mut self.nodes[sender as usize];
            n.mac.end_tx(now, &self.cfg.mac, &mut self.rng_mac);
            if !n.mac.busy() {
                n.cbr.mark_idle(now);
            }
        }
        self.reschedule_access(sender)?;

        let from_learner = sender == self.learner.id && frame.tx_start >= self.warmup;
        let max_d = self.out.prr.max_distance_m();
        for r in &frame.reach {
            let n = &mut self.nodes[r.node as usize];
            let k = n.incoming.iter().position(|i| i.slot == slot).expect("arrival registered");
            let inc = n.incoming.swap_remove(k);
            n.cs_total -= r.power;
            let outcome = self.budget.resolve(inc.power, inc.max_interferer, inc.doomed);
            self.update_carrier_sense(now, r.node)?;
            match outcome {
                ReceptionOutcome::Received => {
                    self.out.receptions += 1;
                    self.on_received(now, r.node, &frame)?;
                }
                ReceptionOutcome::LostCollision => self.out.collisions += 1,
                ReceptionOutcome::BelowThreshold => {}
            }
            if from_learner && f64::from(r.distance) < max_d {
                let v = &self.vehicles[r.node as usize];
                if in_measured_region(v.x, &self.cfg.mobility) {
                    self.out.prr.record(f64::from(r.distance), outcome == ReceptionOutcome::Received);
                }
            }
        }
        Ok(())
    }

    fn on_received(&mut self, now: SimTime, receiver: NodeId, frame: &Frame) -> Result<(), WorldError> {
        let ptype = frame.pending.ptype;
        if self.cfg.scheduler.piggyback_budget > 0 {
            self.nodes[receiver as usize].history.record(frame.sender, ptype, frame.tx_start);
        }
        if receiver != self.learner.id {
            return Ok(());
        }
        let ttl = self.cfg.predictor.ttl_ms * MICROS_PER_MS;
        let warm = now >= self.warmup;
        let l = &mut self.learner;
        let Some(pred) = l.predictor.as_mut() else { return Ok(()) };

        l.evidence
            .entry(frame.sender)
            .or_insert(Evidence { id: frame.sender, last_direct: None, last_piggyback: None })
            .last_direct = Some(now);
        if warm {
            if let Some(expected) = pred.get(frame.sender).and_then(|s| s.predicted_next(ptype)) {
                self.out.prediction_errors.push(PredictionError {
                    neighbor: frame.sender,
                    ptype,
                    abs_error_ms: expected.abs_diff(frame.tx_start) as f64 / MICROS_PER_MS as f64,
                });
            }
        }
        let dynamics = (ptype == PacketType::Cam).then_some(frame.pending.dynamics);
        let obs = Observation { neighbor: frame.sender, ptype, t: frame.tx_start, dynamics, reported_interval: None };
        pred.on_packet(&obs, now)?;

        if frame.pending.piggyback.is_empty() {
            return Ok(());
        }
        let entries = match piggyback::decode(&frame.pending.piggyback) {
            Ok(e) => e,
            Err(_) => {
                self.out.malformed_piggyback += 1;
                return Ok(());
            }
        };
        for e in entries {
            if e.neighbor == l.id {
                continue;
            }
            let ev = l.evidence.entry(e.neighbor).or_insert(Evidence {
                id: e.neighbor,
                last_direct: None,
                last_piggyback: None,
            });
            if ev.classify(now, ttl) == Some(NeighborClass::Visible) {
                continue;
            }
            ev.last_piggyback = Some(now);
            let obs = Observation {
                neighbor: e.neighbor,
                ptype: e.ptype,
                t: piggyback::reconstructed_tx(&e, frame.pending.generated_at),
                dynamics: None,
                reported_interval: (e.interval_ms > 0).then(|| SimTime::from(e.interval_ms) * MICROS_PER_MS),
            };
            pred.on_packet(&obs, now)?;
        }
        Ok(())
    }

    fn finish(mut self, t_end: SimTime) -> RunMetrics {
        let window = self.cfg.mac.cbr_window_us();
        let first = self.warmup.div_ceil(window) as usize;
        let mut measured: Vec<Vec<f64>> = Vec::with_capacity(self.nodes.len());
        for (id, n) in self.nodes.iter_mut().enumerate() {
            let series = n.cbr.finish(t_end);
            if self.opts.cbr_series {
                self.out.cbr_series.extend(series.iter().enumerate().map(|(w, &cbr)| CbrSample {
                    t_ms: (w as u64 + 1) * window / MICROS_PER_MS,
                    node: id as NodeId,
                    cbr,
                }));
            }
            if in_measured_region(self.vehicles[id].x, &self.cfg.mobility) {
                measured.push(series.get(first..).unwrap_or(&[]).to_vec());
            }
            self.out.mac.enqueued += n.mac.counters.enqueued;
            self.out.mac.overflow_drops += n.mac.counters.overflow_drops;
            self.out.mac.expired_drops += n.mac.counters.expired_drops;
            self.out.mac.transmissions += n.mac.counters.transmissions;
            self.out.mac.internal_collisions += n.mac.counters.internal_collisions;
        }
        self.out.mean_cbr = mean_channel_load(measured.iter().map(Vec::as_slice));
        self.out.kernel = self.kernel.stats();
        self.out.digest = self.kernel.digest();
        self.out
    }
}

/// Builds and runs one simulation.
pub fn run(
    cfg: &ScenarioConfig,
    seed: u64,
    models: Option<Arc<Models>>,
    opts: RunOptions,
) -> Result<RunMetrics, WorldError> {
    Simulation::new(cfg, seed, models, opts)?.run()
}
