use serde::{Deserialize, Serialize};

use super::tensor::{Param, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient; 0 disables it.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction. Moment buffers are allocated lazily on the
/// first step and matched to parameters by position.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor2>,
    second: Vec<Tensor2>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.first.is_empty() {
            for p in params.iter() {
                let (r, c) = p.shape();
                self.first.push(Tensor2::zeros(r, c));
                self.second.push(Tensor2::zeros(r, c));
            }
        }
        assert_eq!(self.first.len(), params.len(), "parameter set changed");
        self.step += 1;

        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            assert_eq!(p.shape(), m.shape(), "parameter shape changed");
            let value = p.value.as_mut_slice();
            let grad = p.grad.as_slice();
            for (((w, &g), m), v) in value
                .iter_mut()
                .zip(grad)
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                let g = g + weight_decay * *w;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_run(steps: usize, lr: f64) -> Vec<f64> {
        let mut w = Param::new(Tensor2::filled(1, 1, 1.0));
        let mut opt = AdamState::new(AdamConfig {
            lr,
            ..Default::default()
        });
        (0..steps)
            .map(|_| {
                w.zero_grad();
                w.grad[(0, 0)] = 2.0 * w.value[(0, 0)];
                opt.step(&mut [&mut w]);
                w.value[(0, 0)]
            })
            .collect()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let init = Tensor2::from_rows(&[&[0.3, -2.0]]);
        let mut p = Param::new(init.clone());
        let mut opt = AdamState::new(AdamConfig::default());
        for _ in 0..5 {
            opt.step(&mut [&mut p]);
        }
        assert_eq!(p.value, init);
    }

    #[test]
    fn first_step_descends() {
        assert!(quadratic_run(1, 0.1)[0] < 1.0);
    }

    #[test]
    fn matches_hand_rolled_trace() {
        // independent scalar recurrence, lr = 0.1, defaults otherwise
        let expected = [0.9000000005, 0.8004122286917928, 0.7015862729460303];
        for (got, want) in quadratic_run(3, 0.1).iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }
}
