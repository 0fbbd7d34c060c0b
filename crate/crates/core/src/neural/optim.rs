//! Plain SGD with an exponential per-epoch learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SgdConfig {
    pub base_lr: f64,
    /// Multiplicative decay applied once per epoch.
    pub decay: f64,
    /// Momentum coefficient; `None` selects plain gradient descent.
    pub momentum: Option<f64>,
}

impl SgdConfig {
    pub fn new(base_lr: f64, decay: f64) -> Self {
        SgdConfig {
            base_lr,
            decay,
            momentum: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    config: SgdConfig,
    epoch: u32,
    velocity: Option<Vec<Vec<f64>>>,
}

impl OptimizerState {
    pub fn new(config: SgdConfig) -> Result<Self> {
        if config.base_lr <= 0.0 || config.decay <= 0.0 {
            return Err(Error::Config(
                "learning rate and decay must be positive".into(),
            ));
        }
        Ok(OptimizerState {
            config,
            epoch: 0,
            velocity: None,
        })
    }

    pub fn effective_lr(&self) -> f64 {
        self.config.base_lr * self.config.decay.powi(self.epoch as i32)
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn advance_epoch(&mut self) {
        self.epoch += 1;
    }

    /// Apply one update: `param -= lr * grad` (with optional momentum).
    ///
    /// `tensors` and `grads` must list the same tensors in the same order.
    pub fn step(&mut self, tensors: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if tensors.len() != grads.len() {
            return Err(Error::Argument(format!(
                "optimizer got {} parameter tensors but {} gradient tensors",
                tensors.len(),
                grads.len()
            )));
        }
        for (t, g) in tensors.iter().zip(grads.iter()) {
            if t.len() != g.len() {
                return Err(Error::Argument(format!(
                    "gradient length {} does not match parameter length {}",
                    g.len(),
                    t.len()
                )));
            }
        }
        let lr = self.effective_lr();
        match self.config.momentum {
            None => {
                for (t, g) in tensors.iter_mut().zip(grads.iter()) {
                    for (p, d) in t.iter_mut().zip(g.iter()) {
                        *p -= lr * d;
                    }
                }
            }
            Some(mu) => {
                let velocity = self
                    .velocity
                    .get_or_insert_with(|| grads.iter().map(|g| vec![0.0; g.len()]).collect());
                if velocity.len() != grads.len() {
                    return Err(Error::Argument(
                        "momentum buffers do not match gradient layout".into(),
                    ));
                }
                for ((t, g), v) in tensors.iter_mut().zip(grads.iter()).zip(velocity.iter_mut()) {
                    for ((p, d), vel) in t.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                        *vel = mu * *vel + d;
                        *p -= lr * *vel;
                    }
                }
            }
        }
        Ok(())
    }
}
