use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pruning::Mask;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    SgdMomentum {
        #[serde(default = "default_momentum")]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
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
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd_momentum() -> Self {
        OptimizerConfig::SgdMomentum {
            momentum: default_momentum(),
        }
    }

    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::SgdMomentum { momentum } => (0.0..1.0).contains(&momentum),
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Optimizer buffers aligned with the flat parameter vector.
#[derive(Clone, Debug)]
pub struct OptimState {
    config: OptimizerConfig,
    first: Vec<f32>,
    second: Vec<f32>,
    step: u64,
}

impl OptimState {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        let second = match config {
            OptimizerConfig::Adam { .. } => vec![0.0; len],
            OptimizerConfig::SgdMomentum { .. } => Vec::new(),
        };
        OptimState {
            config,
            first: vec![0.0; len],
            second,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    /// One update. Masked gradients are ignored and masked weights re-zeroed.
    pub fn step(
        &mut self,
        params: &mut [f32],
        grads: &mut [f32],
        mask: &Mask,
        lr: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() || mask.len() != params.len() {
            return Err(Error::dim(
                "optimizer step",
                &[params.len(), grads.len(), mask.len()],
                &[self.first.len()],
            ));
        }
        for (g, &keep) in grads.iter_mut().zip(mask.bits()) {
            if !keep {
                *g = 0.0;
            }
        }
        match self.config {
            OptimizerConfig::SgdMomentum { momentum } => {
                sgd_momentum_step(params, grads, &mut self.first, lr, momentum, weight_decay)
            }
            OptimizerConfig::Adam { beta1, beta2, eps } => {
                let t = self.step + 1;
                adam_step(
                    params,
                    grads,
                    &mut self.first,
                    &mut self.second,
                    t,
                    AdamHyper {
                        lr,
                        beta1,
                        beta2,
                        eps,
                        weight_decay,
                    },
                )
            }
        }
        self.step += 1;
        for (p, &keep) in params.iter_mut().zip(mask.bits()) {
            if !keep {
                *p = 0.0;
            }
        }
        Ok(())
    }
}

/// `v ← μv + g + wd·θ`, `θ ← θ − lr·v`.
pub fn sgd_momentum_step(
    params: &mut [f32],
    grads: &[f32],
    velocity: &mut [f32],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let (lr, mu, wd) = (lr as f32, momentum as f32, weight_decay as f32);
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = mu * *v + g + wd * *p;
        *p -= lr * *v;
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Bias-corrected Adam with L2 decay folded into the gradient; `t` starts at 1.
pub fn adam_step(params: &mut [f32], grads: &[f32], m: &mut [f32], v: &mut [f32], t: u64, h: AdamHyper) {
    let c1 = 1.0 - h.beta1.powf(t as f64);
    let c2 = 1.0 - h.beta2.powf(t as f64);
    let (b1, b2) = (h.beta1 as f32, h.beta2 as f32);
    let step = (h.lr / c1) as f32;
    let inv_c2 = (1.0 / c2) as f32;
    let (eps, wd) = (h.eps as f32, h.weight_decay as f32);
    for i in 0..params.len() {
        let g = grads[i] + wd * params[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        params[i] -= step * m[i] / ((v[i] * inv_c2).sqrt() + eps);
    }
}
