//! Central finite-difference comparison against the analytic gradient.

use rand::seq::index::sample;
use rand::Rng;

use crate::net::{LstmState, RecurrentNet};
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Relative error with an absolute floor so that near-zero gradients do not
/// blow up the ratio.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Checks the parameters at `indices` (flat serialization order) using
/// step `h`. The loss is the sequence MSE from a zero initial state.
pub fn check_indices(
    net: &RecurrentNet,
    inputs: &[Vec<f64>],
    targets: &[f64],
    indices: &[usize],
    h: f64,
    floor: f64,
) -> Result<Vec<ParamCheck>, NnError> {
    let initial = net.initial_state();
    let mut grad = RecurrentNet::zeros(net.architecture().clone());
    net.sequence_gradient(&initial, inputs, targets, &mut grad)?;
    let analytic = grad.flat_params();
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(indices.len());
    for &index in indices {
        let mut params = base.clone();
        params[index] = base[index] + h;
        probe.set_flat_params(&params)?;
        let plus = loss(&probe, &initial, inputs, targets)?;
        params[index] = base[index] - h;
        probe.set_flat_params(&params)?;
        let minus = loss(&probe, &initial, inputs, targets)?;
        let numeric = (plus - minus) / (2.0 * h);
        out.push(ParamCheck {
            index,
            analytic: analytic[index],
            numeric,
            rel_error: relative_error(analytic[index], numeric, floor),
        });
    }
    Ok(out)
}

/// Checks `draws` parameters sampled without replacement (or all of them if
/// the net is smaller).
pub fn check_random<R: Rng + ?Sized>(
    net: &RecurrentNet,
    inputs: &[Vec<f64>],
    targets: &[f64],
    draws: usize,
    h: f64,
    floor: f64,
    rng: &mut R,
) -> Result<Vec<ParamCheck>, NnError> {
    let n = net.architecture().param_count();
    let indices: Vec<usize> = if draws >= n { (0..n).collect() } else { sample(rng, n, draws).into_vec() };
    check_indices(net, inputs, targets, &indices, h, floor)
}

fn loss(net: &RecurrentNet, initial: &LstmState, inputs: &[Vec<f64>], targets: &[f64]) -> Result<f64, NnError> {
    Ok(net.sequence_loss(initial, inputs, targets)?.0)
}
