//! Offline training of the per-type interval predictors from a packet log,
//! and replay evaluation of a trained predictor on another log.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use v2x_nn::{Architecture, MinMaxScaler, NamedModel, NnError, RecurrentNet, Sequence, TrainConfig, WeightFile};

use crate::apps::{Dynamics, PacketType};
use crate::kernel::{SimTime, MICROS_PER_SEC};
use crate::metrics::PredictionError;
use crate::mobility::{MobilityConfig, NodeId};
use crate::packet_log::PacketRecord;
use crate::predictor::{features, Models, NetKind, PredictorKind};
use crate::rng::{stream_seed, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub bptt_len: usize,
    pub clip_norm: f64,
    /// Sender sequences drawn per network.
    pub max_sequences: usize,
    /// Longest contiguous stretch taken from one sender.
    pub max_steps: usize,
    pub dense: Vec<usize>,
    pub lstm: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            learning_rate: 1e-3,
            lr_decay: 0.95,
            bptt_len: 32,
            clip_norm: 5.0,
            max_sequences: 48,
            max_steps: 120,
            dense: vec![40, 50, 60],
            lstm: 60,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error(transparent)]
    Net(#[from] NnError),
    #[error("training needs at least one epoch, one step and one sequence")]
    Budget,
}

/// Unscaled steps of one sender: inputs at packet `k`, target the interval
/// from `k` to `k + 1` in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSequence {
    pub sender: NodeId,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

fn secs(dt: SimTime) -> f64 {
    dt as f64 / MICROS_PER_SEC as f64
}

/// Packets of each `(sender, type)` pair in time order.
pub fn group_by_sender(records: &[PacketRecord]) -> BTreeMap<(NodeId, PacketType), Vec<&PacketRecord>> {
    let mut groups: BTreeMap<(NodeId, PacketType), Vec<&PacketRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.sender, r.ptype)).or_default().push(r);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|r| r.t_us);
        g.dedup_by_key(|r| r.t_us);
    }
    groups
}

fn dynamics(r: &PacketRecord) -> Dynamics {
    Dynamics { x: r.x, heading: r.heading, speed: r.speed }
}

/// Training sequences for one network kind.
pub fn build_sequences(records: &[PacketRecord], kind: NetKind, mob: &MobilityConfig) -> Vec<RawSequence> {
    let ptype = match kind {
        NetKind::Cam | NetKind::CamInterval => PacketType::Cam,
        NetKind::Cpm => PacketType::Cpm,
        NetKind::Ldm => PacketType::Ldm,
    };
    let with_dyn = kind == NetKind::Cam;
    group_by_sender(records)
        .into_iter()
        .filter(|((_, t), g)| *t == ptype && g.len() >= 3)
        .map(|((sender, _), g)| {
            let mut seq = RawSequence { sender, inputs: Vec::new(), targets: Vec::new() };
            for k in 1..g.len() - 1 {
                let dt_prev = secs(g[k].t_us - g[k - 1].t_us);
                let (cur, prev) =
                    if with_dyn { (Some(dynamics(g[k])), Some(dynamics(g[k - 1]))) } else { (None, None) };
                seq.inputs.push(features(kind, dt_prev, cur, prev, mob));
                seq.targets.push(secs(g[k + 1].t_us - g[k].t_us));
            }
            seq
        })
        .collect()
}

/// Deterministic subsample: at most `max_sequences` senders, each cut to a
/// random window of at most `max_steps` steps.
pub fn subsample<R: Rng + ?Sized>(
    mut seqs: Vec<RawSequence>,
    max_sequences: usize,
    max_steps: usize,
    rng: &mut R,
) -> Vec<RawSequence> {
    seqs.shuffle(rng);
    seqs.truncate(max_sequences);
    for s in &mut seqs {
        if s.targets.len() > max_steps {
            let start = rng.random_range(0..=s.targets.len() - max_steps);
            s.inputs = s.inputs[start..start + max_steps].to_vec();
            s.targets = s.targets[start..start + max_steps].to_vec();
        }
    }
    seqs.sort_by_key(|s| s.sender);
    seqs
}

/// Scalers fit on the corpus, and the corpus scaled with them.
pub fn scale_corpus(seqs: &[RawSequence]) -> Option<(MinMaxScaler, MinMaxScaler, Vec<Sequence>)> {
    let input = MinMaxScaler::fit(seqs.iter().flat_map(|s| s.inputs.iter().map(Vec::as_slice)))?;
    let target = MinMaxScaler::fit(seqs.iter().flat_map(|s| s.targets.iter().map(std::slice::from_ref)))?;
    let scaled = seqs
        .iter()
        .map(|s| Sequence {
            inputs: s.inputs.iter().map(|x| input.scale(x)).collect(),
            targets: s.targets.iter().map(|&y| target.scale_component(0, y)).collect(),
        })
        .collect();
    Some((input, target, scaled))
}

#[derive(Debug, Clone, PartialEq)]
pub struct KindReport {
    pub kind: NetKind,
    pub sequences: usize,
    pub steps: usize,
    /// Scaled MSE after each epoch; empty for an untrained slot.
    pub epoch_losses: Vec<f64>,
}

/// Trains one network. Returns an untrained slot for an empty corpus.
pub fn train_kind(
    records: &[PacketRecord],
    kind: NetKind,
    mob: &MobilityConfig,
    cfg: &TrainingConfig,
) -> Result<(NamedModel, KindReport), TrainingError> {
    if cfg.epochs == 0 || cfg.max_steps == 0 || cfg.max_sequences == 0 {
        return Err(TrainingError::Budget);
    }
    let arch = Architecture { inputs: kind.input_width(), dense: cfg.dense.clone(), lstm: cfg.lstm };
    let seed = stream_seed(cfg.seed, Stream::Training) ^ (kind as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let seqs = subsample(build_sequences(records, kind, mob), cfg.max_sequences, cfg.max_steps, &mut rng);
    let mut report = KindReport { kind, sequences: seqs.len(), steps: 0, epoch_losses: Vec::new() };
    let Some((input_scaler, target_scaler, scaled)) = scale_corpus(&seqs) else {
        let w = kind.input_width();
        let model = NamedModel {
            name: kind.name().into(),
            arch,
            input_scaler: MinMaxScaler::new(vec![0.0; w], vec![0.0; w]),
            target_range: (0.0, 0.0),
            net: None,
        };
        return Ok((model, report));
    };
    report.steps = scaled.iter().map(Sequence::len).sum();
    let mut net = RecurrentNet::init(arch.clone(), &mut rng);
    let tc = TrainConfig {
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        lr_decay: cfg.lr_decay,
        bptt_len: cfg.bptt_len,
        clip_norm: cfg.clip_norm,
        seed: rng.random(),
    };
    report.epoch_losses = v2x_nn::train(&mut net, &scaled, &tc)?.epoch_losses;
    let model = NamedModel {
        name: kind.name().into(),
        arch,
        input_scaler,
        target_range: (target_scaler.lo[0], target_scaler.hi[0]),
        net: Some(net),
    };
    Ok((model, report))
}

/// Trains every network kind on one packet log.
pub fn train_all(
    records: &[PacketRecord],
    mob: &MobilityConfig,
    cfg: &TrainingConfig,
) -> Result<(WeightFile, Vec<KindReport>), TrainingError> {
    let mut models = Vec::new();
    let mut reports = Vec::new();
    for kind in NetKind::ALL {
        let (m, r) = train_kind(records, kind, mob, cfg)?;
        models.push(m);
        reports.push(r);
    }
    Ok((WeightFile { seed: cfg.seed, models }, reports))
}

/// Replays a log through the predictor, one sender at a time, and reports
/// the error of every next-packet prediction. CAMs use the kinematic net.
pub fn evaluate(
    records: &[PacketRecord],
    models: &Models,
    kind: PredictorKind,
    mob: &MobilityConfig,
    min_interval_s: f64,
) -> Result<Vec<PredictionError>, NnError> {
    let mut out = Vec::new();
    for ((sender, ptype), g) in group_by_sender(records) {
        if g.len() < 3 {
            continue;
        }
        let net_kind = NetKind::for_packet(ptype, true);
        let model = match kind {
            PredictorKind::Lstm => models.get(net_kind),
            PredictorKind::Baseline => None,
        };
        let mut state = model.map(|m| m.net.initial_state());
        for k in 1..g.len() - 1 {
            let dt_prev = secs(g[k].t_us - g[k - 1].t_us);
            let interval = match (model, state.as_mut()) {
                (Some(m), Some(st)) => {
                    let with_dyn = net_kind == NetKind::Cam;
                    let (cur, prev) =
                        if with_dyn { (Some(dynamics(g[k])), Some(dynamics(g[k - 1]))) } else { (None, None) };
                    m.step(st, &features(net_kind, dt_prev, cur, prev, mob), min_interval_s)?
                }
                _ => dt_prev.max(min_interval_s),
            };
            let actual = secs(g[k + 1].t_us - g[k].t_us);
            out.push(PredictionError { neighbor: sender, ptype, abs_error_ms: (interval - actual).abs() * 1e3 });
        }
    }
    Ok(out)
}
