//! Truncated backpropagation through time with Adam, one sequence per
//! update (batch size 1).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::Adam;
use crate::net::{LstmState, RecurrentNet};
use crate::NnError;

/// A scaled input/target sequence for one sender.
#[derive(Debug, Clone, Default)]
pub struct Sequence {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Multiplied into the learning rate after every epoch.
    pub lr_decay: f64,
    /// Steps per truncated-BPTT chunk; the recurrent state is carried across
    /// chunks of the same sequence.
    pub bptt_len: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, learning_rate: 1e-3, lr_decay: 0.9, bptt_len: 32, clip_norm: 5.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Mean squared error over the whole corpus after each epoch.
    pub epoch_losses: Vec<f64>,
    pub updates: u64,
}

/// Mean squared error over every step of every sequence, each sequence
/// starting from a zero state.
pub fn corpus_loss(net: &RecurrentNet, seqs: &[Sequence]) -> Result<f64, NnError> {
    let mut sse = 0.0;
    let mut n = 0usize;
    for seq in seqs.iter().filter(|s| !s.is_empty()) {
        let (mse, _) = net.sequence_loss(&net.initial_state(), &seq.inputs, &seq.targets)?;
        sse += mse * seq.len() as f64;
        n += seq.len();
    }
    Ok(if n == 0 { 0.0 } else { sse / n as f64 })
}

pub fn train(net: &mut RecurrentNet, seqs: &[Sequence], cfg: &TrainConfig) -> Result<TrainReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.architecture().param_count(), cfg.learning_rate);
    let mut grad = RecurrentNet::zeros(net.architecture().clone());
    let mut order: Vec<usize> = (0..seqs.len()).filter(|&k| !seqs[k].is_empty()).collect();
    let chunk = cfg.bptt_len.max(1);
    let mut report = TrainReport::default();

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            let seq = &seqs[k];
            let mut state: LstmState = net.initial_state();
            let mut start = 0;
            while start < seq.len() {
                let end = (start + chunk).min(seq.len());
                grad.clear();
                let (_, next) =
                    net.sequence_gradient(&state, &seq.inputs[start..end], &seq.targets[start..end], &mut grad)?;
                clip(&mut grad, cfg.clip_norm);
                adam.step(net, &grad);
                state = next;
                start = end;
            }
        }
        report.epoch_losses.push(corpus_loss(net, seqs)?);
        adam.learning_rate *= cfg.lr_decay;
    }
    report.updates = adam.steps_taken();
    Ok(report)
}

fn clip(grad: &mut RecurrentNet, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm: f64 = grad.param_slices().iter().flat_map(|s| s.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for s in grad.param_slices_mut() {
            s.iter_mut().for_each(|g| *g *= k);
        }
    }
}
