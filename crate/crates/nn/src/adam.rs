use crate::net::RecurrentNet;

/// Adam optimizer state for one [`RecurrentNet`].
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update using `grad` (same shape as `net`).
    pub fn step(&mut self, net: &mut RecurrentNet, grad: &RecurrentNet) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = self.learning_rate * bc2.sqrt() / bc1;
        let mut offset = 0;
        for (p, g) in net.param_slices_mut().into_iter().zip(grad.param_slices()) {
            let m = &mut self.m[offset..offset + p.len()];
            let v = &mut self.v[offset..offset + p.len()];
            for k in 0..p.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                p[k] -= step * m[k] / (v[k].sqrt() + self.epsilon);
            }
            offset += p.len();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Architecture;

    #[test]
    fn first_step_moves_each_parameter_by_learning_rate() {
        let arch = Architecture { inputs: 1, dense: vec![2], lstm: 2 };
        let mut net = RecurrentNet::zeros(arch.clone());
        let mut grad = RecurrentNet::zeros(arch.clone());
        let flat: Vec<f64> = (0..arch.param_count()).map(|k| if k % 2 == 0 { 3.0 } else { -0.5 }).collect();
        grad.set_flat_params(&flat).unwrap();
        let mut adam = Adam::new(arch.param_count(), 0.01);
        adam.step(&mut net, &grad);
        for (p, g) in net.flat_params().iter().zip(&flat) {
            assert!((p + 0.01 * g.signum()).abs() < 1e-7);
        }
    }
}
