//! First-order optimizers.

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd,
    Momentum {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
    },
}

fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam()
    }
}

/// Optimizer state for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, lr: f64, params: &[&Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>();
        let (first, second) = match cfg {
            OptimizerConfig::Sgd => (Vec::new(), Vec::new()),
            OptimizerConfig::Momentum { .. } => (zeros(), Vec::new()),
            OptimizerConfig::Adam { .. } => (zeros(), zeros()),
        };
        Self {
            cfg,
            lr,
            step: 0,
            first,
            second,
        }
    }

    /// Applies one update; `grads[i]` belongs to `params[i]`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let lr = self.lr;
        match self.cfg {
            OptimizerConfig::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerConfig::Momentum { momentum } => {
                for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((w, d), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        *v = momentum * *v + d;
                        *w -= lr * *v;
                    }
                }
            }
            OptimizerConfig::Adam { beta1, beta2, epsilon } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for (((w, &d), m), v) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * d;
                        *v = beta2 * *v + (1.0 - beta2) * d * d;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(cfg: OptimizerConfig, lr: f64, grads: &[f64]) -> Vec<f64> {
        let mut p = Tensor::from_vec(vec![1.0]);
        let mut opt = Optimizer::new(cfg, lr, &[&p]);
        let mut out = Vec::new();
        for &g in grads {
            let g = Tensor::from_vec(vec![g]);
            opt.step(&mut [&mut p], &[&g]);
            out.push(p.item());
        }
        out
    }

    #[test]
    fn sgd_step() {
        assert_eq!(run(OptimizerConfig::Sgd, 0.1, &[2.0]), vec![0.8]);
    }

    #[test]
    fn momentum_accumulates() {
        let out = run(OptimizerConfig::Momentum { momentum: 0.5 }, 0.1, &[1.0, 1.0]);
        assert!((out[0] - 0.9).abs() < 1e-15);
        assert!((out[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        // bias correction makes the first step lr·g/(|g|+ε)
        let out = run(OptimizerConfig::adam(), 0.01, &[-3.0]);
        assert!((out[0] - (1.0 + 0.01 * 3.0 / (3.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        for cfg in [
            OptimizerConfig::Sgd,
            OptimizerConfig::Momentum { momentum: 0.9 },
            OptimizerConfig::adam(),
        ] {
            assert_eq!(run(cfg, 0.0, &[1.0, -2.0, 5.0]), vec![1.0; 3]);
        }
    }
}
