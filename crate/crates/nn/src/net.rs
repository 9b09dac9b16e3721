//! Dense-tanh stack feeding a single LSTM layer with a linear scalar head.
//!
//! Gate blocks inside the LSTM matrices are stacked in the order
//! input, forget, candidate, output (`i, f, g, o`), each `hidden` rows tall.

use rand::Rng;

use crate::linalg::{matvec_acc, matvec_t_acc, outer_acc, sigmoid};
use crate::NnError;

/// Layer widths of a [`RecurrentNet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub inputs: usize,
    pub dense: Vec<usize>,
    pub lstm: usize,
}

impl Architecture {
    /// The 40-50-60 dense stack with a 60-wide LSTM.
    pub fn standard(inputs: usize) -> Self {
        Self { inputs, dense: vec![40, 50, 60], lstm: 60 }
    }

    /// Width of the vector that enters the LSTM.
    pub fn lstm_input(&self) -> usize {
        self.dense.last().copied().unwrap_or(self.inputs)
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        let mut prev = self.inputs;
        for &w in &self.dense {
            n += w * prev + w;
            prev = w;
        }
        let h = self.lstm;
        n += 4 * h * prev + 4 * h * h + 4 * h;
        n + h + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weight: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        matvec_acc(&self.weight, x, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub inputs: usize,
    pub hidden: usize,
    /// `4·hidden × inputs`.
    pub w_input: Vec<f64>,
    /// `4·hidden × hidden`.
    pub w_recurrent: Vec<f64>,
    /// `4·hidden`.
    pub bias: Vec<f64>,
}

impl LstmLayer {
    fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            inputs,
            hidden,
            w_input: vec![0.0; 4 * hidden * inputs],
            w_recurrent: vec![0.0; 4 * hidden * hidden],
            bias: vec![0.0; 4 * hidden],
        }
    }
}

/// Per-sequence recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentNet {
    arch: Architecture,
    pub dense: Vec<DenseLayer>,
    pub lstm: LstmLayer,
    /// `1 × hidden` linear read-out.
    pub head: DenseLayer,
}

/// Activations of one time step, kept for the backward pass.
#[derive(Debug, Clone)]
struct StepCache {
    /// Input followed by every dense layer's tanh output.
    layers: Vec<Vec<f64>>,
    /// Post-activation gates `i, f, g, o`.
    gates: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    y: f64,
}

impl RecurrentNet {
    /// All-zero weights.
    pub fn zeros(arch: Architecture) -> Self {
        let mut dense = Vec::with_capacity(arch.dense.len());
        let mut prev = arch.inputs;
        for &w in &arch.dense {
            dense.push(DenseLayer::zeros(prev, w));
            prev = w;
        }
        let lstm = LstmLayer::zeros(prev, arch.lstm);
        let head = DenseLayer::zeros(arch.lstm, 1);
        Self { arch, dense, lstm, head }
    }

    /// Glorot-uniform weights, zero biases except a forget-gate bias of 1.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        fn glorot<R: Rng + ?Sized>(w: &mut [f64], fan_in: usize, fan_out: usize, rng: &mut R) {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        for layer in &mut net.dense {
            glorot(&mut layer.weight, layer.inputs, layer.outputs, rng);
        }
        let h = net.lstm.hidden;
        let i = net.lstm.inputs;
        glorot(&mut net.lstm.w_input, i, h, rng);
        glorot(&mut net.lstm.w_recurrent, h, h, rng);
        for v in &mut net.lstm.bias[h..2 * h] {
            *v = 1.0;
        }
        glorot(&mut net.head.weight, h, 1, rng);
        net
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn initial_state(&self) -> LstmState {
        LstmState::zeros(self.arch.lstm)
    }

    /// One inference step: consumes `x`, advances `state`, returns the raw
    /// (scaled) scalar output.
    pub fn step(&self, state: &mut LstmState, x: &[f64]) -> Result<f64, NnError> {
        let cache = self.forward_step(state, x)?;
        state.h = cache.h;
        state.c = cache.c;
        Ok(cache.y)
    }

    fn forward_step(&self, state: &LstmState, x: &[f64]) -> Result<StepCache, NnError> {
        if x.len() != self.arch.inputs {
            return Err(NnError::DimensionMismatch { expected: self.arch.inputs, got: x.len() });
        }
        let mut layers = Vec::with_capacity(self.dense.len() + 1);
        layers.push(x.to_vec());
        for layer in &self.dense {
            let mut a = layer.affine(layers.last().expect("input pushed"));
            for v in &mut a {
                *v = v.tanh();
            }
            layers.push(a);
        }
        let h_size = self.arch.lstm;
        let top = layers.last().expect("input pushed");
        let mut z = self.lstm.bias.clone();
        matvec_acc(&self.lstm.w_input, top, &mut z);
        matvec_acc(&self.lstm.w_recurrent, &state.h, &mut z);
        let mut gates = z;
        for (k, v) in gates.iter_mut().enumerate() {
            *v = if k / h_size == 2 { v.tanh() } else { sigmoid(*v) };
        }
        let mut c = vec![0.0; h_size];
        let mut tanh_c = vec![0.0; h_size];
        let mut h = vec![0.0; h_size];
        for j in 0..h_size {
            let (i, f, g, o) = (gates[j], gates[h_size + j], gates[2 * h_size + j], gates[3 * h_size + j]);
            c[j] = f * state.c[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        let y = self.head.affine(&h)[0];
        if !y.is_finite() || h.iter().any(|v| !v.is_finite()) || c.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite);
        }
        Ok(StepCache { layers, gates, h_prev: state.h.clone(), c_prev: state.c.clone(), c, tanh_c, h, y })
    }

    /// Runs a sequence from `initial`, returning the mean squared error over
    /// the steps and the final state.
    pub fn sequence_loss(
        &self,
        initial: &LstmState,
        inputs: &[Vec<f64>],
        targets: &[f64],
    ) -> Result<(f64, LstmState), NnError> {
        check_lengths(inputs, targets)?;
        let mut state = initial.clone();
        let mut sse = 0.0;
        for (x, &t) in inputs.iter().zip(targets) {
            let y = self.step(&mut state, x)?;
            sse += (y - t).powi(2);
        }
        Ok((sse / inputs.len().max(1) as f64, state))
    }

    /// Backpropagation through time over one sequence. The gradient of the
    /// mean squared error is *added* into `grad`, which must share this
    /// net's architecture. The initial state is treated as a constant.
    pub fn sequence_gradient(
        &self,
        initial: &LstmState,
        inputs: &[Vec<f64>],
        targets: &[f64],
        grad: &mut RecurrentNet,
    ) -> Result<(f64, LstmState), NnError> {
        check_lengths(inputs, targets)?;
        if grad.arch != self.arch {
            return Err(NnError::ArchitectureMismatch);
        }
        let steps = inputs.len();
        let h_size = self.arch.lstm;
        let mut caches = Vec::with_capacity(steps);
        let mut state = initial.clone();
        let mut sse = 0.0;
        for (x, &t) in inputs.iter().zip(targets) {
            let cache = self.forward_step(&state, x)?;
            sse += (cache.y - t).powi(2);
            state = LstmState { h: cache.h.clone(), c: cache.c.clone() };
            caches.push(cache);
        }
        if steps == 0 {
            return Ok((0.0, state));
        }
        let scale = 2.0 / steps as f64;

        let mut dh_next = vec![0.0; h_size];
        let mut dc_next = vec![0.0; h_size];
        let mut dz = vec![0.0; 4 * h_size];
        for (cache, &t) in caches.iter().zip(targets).rev() {
            let dy = scale * (cache.y - t);
            grad.head.bias[0] += dy;
            outer_acc(&mut grad.head.weight, &[dy], &cache.h);

            let mut dh = dh_next.clone();
            for (d, w) in dh.iter_mut().zip(&self.head.weight) {
                *d += dy * w;
            }
            for j in 0..h_size {
                let (i, f, g, o) =
                    (cache.gates[j], cache.gates[h_size + j], cache.gates[2 * h_size + j], cache.gates[3 * h_size + j]);
                let tc = cache.tanh_c[j];
                let dc = dh[j] * o * (1.0 - tc * tc) + dc_next[j];
                let d_o = dh[j] * tc;
                let d_i = dc * g;
                let d_g = dc * i;
                let d_f = dc * cache.c_prev[j];
                dz[j] = d_i * i * (1.0 - i);
                dz[h_size + j] = d_f * f * (1.0 - f);
                dz[2 * h_size + j] = d_g * (1.0 - g * g);
                dz[3 * h_size + j] = d_o * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            let top = cache.layers.last().expect("input pushed");
            outer_acc(&mut grad.lstm.w_input, &dz, top);
            outer_acc(&mut grad.lstm.w_recurrent, &dz, &cache.h_prev);
            for (b, d) in grad.lstm.bias.iter_mut().zip(&dz) {
                *b += d;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(&self.lstm.w_recurrent, &dz, &mut dh_next);

            let mut da = vec![0.0; top.len()];
            matvec_t_acc(&self.lstm.w_input, &dz, &mut da);
            for (k, layer) in self.dense.iter().enumerate().rev() {
                let out = &cache.layers[k + 1];
                let input = &cache.layers[k];
                let dpre: Vec<f64> = da.iter().zip(out).map(|(d, a)| d * (1.0 - a * a)).collect();
                let g = &mut grad.dense[k];
                outer_acc(&mut g.weight, &dpre, input);
                for (b, d) in g.bias.iter_mut().zip(&dpre) {
                    *b += d;
                }
                if k > 0 {
                    da = vec![0.0; input.len()];
                    matvec_t_acc(&layer.weight, &dpre, &mut da);
                }
            }
        }
        Ok((sse / steps as f64, state))
    }

    /// Parameter slices in serialization order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.dense {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out.push(&self.lstm.w_input);
        out.push(&self.lstm.w_recurrent);
        out.push(&self.lstm.bias);
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.dense {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.lstm.w_input);
        out.push(&mut self.lstm.w_recurrent);
        out.push(&mut self.lstm.bias);
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        let expected = self.arch.param_count();
        if flat.len() != expected {
            return Err(NnError::DimensionMismatch { expected, got: flat.len() });
        }
        let mut offset = 0;
        for slice in self.param_slices_mut() {
            let n = slice.len();
            slice.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Sets every parameter to zero, keeping shapes.
    pub fn clear(&mut self) {
        for slice in self.param_slices_mut() {
            slice.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

fn check_lengths(inputs: &[Vec<f64>], targets: &[f64]) -> Result<(), NnError> {
    if inputs.len() != targets.len() {
        return Err(NnError::DimensionMismatch { expected: inputs.len(), got: targets.len() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> Architecture {
        Architecture { inputs: 1, dense: vec![], lstm: 2 }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = RecurrentNet::zeros(Architecture::standard(7));
        let mut state = net.initial_state();
        let y = net.step(&mut state, &[0.3; 7]).unwrap();
        assert_eq!(y, 0.0);
        // Gates sit at 0.5, candidate at 0: the cell stays empty.
        assert!(state.c.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn param_count_matches_slices() {
        let arch = Architecture::standard(7);
        let net = RecurrentNet::zeros(arch.clone());
        assert_eq!(net.flat_params().len(), arch.param_count());
        // 7·40+40 + 40·50+50 + 50·60+60 + 4·60·60·2+240 + 61
        assert_eq!(arch.param_count(), 320 + 2050 + 3060 + 29040 + 61);
    }

    /// 1-2-1 cell worked by hand (no dense layers).
    #[test]
    fn tiny_cell_matches_hand_arithmetic() {
        let mut net = RecurrentNet::zeros(tiny_arch());
        // Rows: i0 i1 f0 f1 g0 g1 o0 o1
        net.lstm.w_input = vec![0.5, -0.3, 0.8, 0.1, 1.2, -0.7, 0.4, 0.9];
        net.lstm.w_recurrent = vec![
            0.1, 0.2, //
            -0.1, 0.3, //
            0.05, -0.2, //
            0.4, 0.0, //
            0.3, 0.3, //
            -0.5, 0.2, //
            0.2, -0.1, //
            0.0, 0.6,
        ];
        net.lstm.bias = vec![0.0, 0.1, 1.0, 1.0, 0.0, -0.1, 0.2, 0.0];
        net.head.weight = vec![1.5, -2.0];
        net.head.bias = vec![0.25];

        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let x = 0.7;
        // Step 1 from zero state; the forget gate multiplies c0 = 0.
        let i = [sig(0.5 * x), sig(-0.3 * x + 0.1)];
        let _f = [sig(0.8 * x + 1.0), sig(0.1 * x + 1.0)];
        let g = [(1.2 * x).tanh(), (-0.7 * x - 0.1).tanh()];
        let o = [sig(0.4 * x + 0.2), sig(0.9 * x)];
        let c1 = [i[0] * g[0], i[1] * g[1]];
        let h1 = [o[0] * c1[0].tanh(), o[1] * c1[1].tanh()];
        let y1 = 1.5 * h1[0] - 2.0 * h1[1] + 0.25;

        // Step 2 with x = -0.4.
        let x2 = -0.4;
        let pre = |wi: f64, r0: f64, r1: f64, b: f64| wi * x2 + r0 * h1[0] + r1 * h1[1] + b;
        let i2 = [sig(pre(0.5, 0.1, 0.2, 0.0)), sig(pre(-0.3, -0.1, 0.3, 0.1))];
        let f2 = [sig(pre(0.8, 0.05, -0.2, 1.0)), sig(pre(0.1, 0.4, 0.0, 1.0))];
        let g2 = [pre(1.2, 0.3, 0.3, 0.0).tanh(), pre(-0.7, -0.5, 0.2, -0.1).tanh()];
        let o2 = [sig(pre(0.4, 0.2, -0.1, 0.2)), sig(pre(0.9, 0.0, 0.6, 0.0))];
        let c2 = [f2[0] * c1[0] + i2[0] * g2[0], f2[1] * c1[1] + i2[1] * g2[1]];
        let h2 = [o2[0] * c2[0].tanh(), o2[1] * c2[1].tanh()];
        let y2 = 1.5 * h2[0] - 2.0 * h2[1] + 0.25;

        let mut state = net.initial_state();
        let out1 = net.step(&mut state, &[x]).unwrap();
        assert!((out1 - y1).abs() < 1e-12);
        assert!((state.c[0] - c1[0]).abs() < 1e-12 && (state.h[1] - h1[1]).abs() < 1e-12);
        let out2 = net.step(&mut state, &[x2]).unwrap();
        assert!((out2 - y2).abs() < 1e-12, "{out2} vs {y2}");
    }

    #[test]
    fn identical_sequences_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = RecurrentNet::init(Architecture::standard(3), &mut rng);
        let seq = [[0.1, -0.2, 0.3], [0.5, 0.5, -0.9], [0.0, 0.2, 0.1]];
        let run = || {
            let mut s = net.initial_state();
            seq.iter().map(|x| net.step(&mut s, x).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_weights_are_rejected() {
        let mut net = RecurrentNet::zeros(tiny_arch());
        net.head.bias[0] = f64::NAN;
        let mut state = net.initial_state();
        assert!(matches!(net.step(&mut state, &[0.0]), Err(NnError::NonFinite)));
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let net = RecurrentNet::zeros(tiny_arch());
        let mut state = net.initial_state();
        assert!(matches!(net.step(&mut state, &[0.0, 1.0]), Err(NnError::DimensionMismatch { expected: 1, got: 2 })));
    }
}
