//! First-order optimizers, learning-rate schedules, and the training loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ClassifierParams;
use crate::objective::LossAndGrad;
use crate::rng::{rng_for, Stream};

pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Gd,
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// `lr * rate^epoch`
    ExpDecay { rate: f64 },
    /// Linear ramp from 0 to `peak_lr` over `warmup_epochs` (interpolated per
    /// iteration), then `peak_lr * decay_rate^(epoch - warmup_epochs)`.
    WarmupExp {
        warmup_epochs: usize,
        peak_lr: f64,
        decay_rate: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    ADAM_EPSILON
}
fn default_schedule() -> Schedule {
    Schedule::Constant
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// Examples per step; 0 means full batch.
    #[serde(default)]
    pub batch_size: usize,
    /// Passes over the data. With full batches this is the iteration count.
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl OptimizerConfig {
    /// Plain gradient descent with a fixed step and full batches.
    pub fn gd(learning_rate: f64, iterations: usize) -> Self {
        Self {
            kind: OptimizerKind::Gd,
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: ADAM_EPSILON,
            schedule: Schedule::Constant,
            batch_size: 0,
            epochs: iterations,
            seed: 0,
        }
    }

    /// Adam with exponential per-epoch decay.
    pub fn adam(learning_rate: f64, decay: f64, batch_size: usize, epochs: usize) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            schedule: Schedule::ExpDecay { rate: decay },
            batch_size,
            ..Self::gd(learning_rate, epochs)
        }
    }

    /// Momentum SGD with l2 weight decay and a warmup-then-decay schedule.
    pub fn sgd_warmup(
        peak_lr: f64,
        momentum: f64,
        weight_decay: f64,
        warmup_epochs: usize,
        decay_rate: f64,
        batch_size: usize,
        epochs: usize,
    ) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            learning_rate: peak_lr,
            momentum,
            weight_decay,
            schedule: Schedule::WarmupExp {
                warmup_epochs,
                peak_lr,
                decay_rate,
            },
            batch_size,
            ..Self::gd(peak_lr, epochs)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        let decay_ok = |r: f64| r > 0.0 && r <= 1.0;
        match self.schedule {
            Schedule::Constant => {}
            Schedule::ExpDecay { rate } if !decay_ok(rate) => {
                return bad(format!("decay rate must be in (0, 1], got {rate}"));
            }
            Schedule::WarmupExp {
                peak_lr,
                decay_rate,
                ..
            } => {
                if !decay_ok(decay_rate) {
                    return bad(format!("decay rate must be in (0, 1], got {decay_rate}"));
                }
                if !(peak_lr > 0.0) {
                    return bad(format!("peak_lr must be positive, got {peak_lr}"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Learning rate at `iteration` (0-based) of `epoch`, out of
/// `iterations_per_epoch`.
pub fn schedule_lr(
    config: &OptimizerConfig,
    epoch: usize,
    iteration: usize,
    iterations_per_epoch: usize,
) -> f64 {
    match config.schedule {
        Schedule::Constant => config.learning_rate,
        Schedule::ExpDecay { rate } => config.learning_rate * rate.powi(epoch as i32),
        Schedule::WarmupExp {
            warmup_epochs,
            peak_lr,
            decay_rate,
        } => {
            if epoch < warmup_epochs {
                let progress = epoch as f64 + iteration as f64 / iterations_per_epoch.max(1) as f64;
                peak_lr * progress / warmup_epochs as f64
            } else {
                peak_lr * decay_rate.powi((epoch - warmup_epochs) as i32)
            }
        }
    }
}

/// Per-parameter state carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        Self {
            velocity: vec![0.0; n_params],
            second: vec![0.0; n_params],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of `params` in place with learning rate `lr`. Weight decay
    /// is added to the gradient as `weight_decay * W`.
    pub fn step(
        &mut self,
        config: &OptimizerConfig,
        params: &mut [f64],
        grad: &[f64],
        lr: f64,
    ) -> Result<()> {
        if grad.len() != params.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient vs parameters",
                expected: params.len(),
                found: grad.len(),
            });
        }
        if self.velocity.len() != params.len() {
            return Err(Error::DimensionMismatch {
                context: "optimizer state",
                expected: params.len(),
                found: self.velocity.len(),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(i));
        }
        self.steps += 1;
        let wd = config.weight_decay;
        match config.kind {
            OptimizerKind::Gd => {
                for (w, g) in params.iter_mut().zip(grad) {
                    *w -= lr * (g + wd * *w);
                }
            }
            OptimizerKind::SgdMomentum => {
                for ((w, g), v) in params.iter_mut().zip(grad).zip(&mut self.velocity) {
                    *v = config.momentum * *v + g + wd * *w;
                    *w -= lr * *v;
                }
            }
            OptimizerKind::Adam => {
                let t = self.steps as i32;
                let c1 = 1.0 - config.beta1.powi(t);
                let c2 = 1.0 - config.beta2.powi(t);
                for (((w, g), m), s) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(&mut self.velocity)
                    .zip(&mut self.second)
                {
                    let g = g + wd * *w;
                    *m = config.beta1 * *m + (1.0 - config.beta1) * g;
                    *s = config.beta2 * *s + (1.0 - config.beta2) * g * g;
                    let m_hat = *m / c1;
                    let s_hat = *s / c2;
                    *w -= lr * m_hat / (s_hat.sqrt() + config.epsilon);
                }
            }
        }
        Ok(())
    }
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ClassifierParams,
    /// Mean loss per epoch (example-weighted over that epoch's batches).
    pub history: Vec<f64>,
}

/// Minimizes `objective` over `n_examples` indices with the configured
/// optimizer. Batches are drawn without replacement from a fresh seeded
/// shuffle every epoch; `batch_size == 0` uses all indices in order.
pub fn train<F>(
    mut params: ClassifierParams,
    n_examples: usize,
    config: &OptimizerConfig,
    mut objective: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&ClassifierParams, &[usize]) -> Result<LossAndGrad>,
{
    config.validate()?;
    if n_examples == 0 && config.epochs > 0 {
        return Err(Error::EmptyBatch);
    }
    let mut state = OptimizerState::new(params.n_params());
    let mut rng = rng_for(config.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..n_examples).collect();
    let batch = if config.batch_size == 0 {
        n_examples
    } else {
        config.batch_size.min(n_examples)
    };
    let per_epoch = n_examples.div_ceil(batch.max(1));
    let mut history = Vec::with_capacity(config.epochs);
    let mut iteration = 0usize;
    for epoch in 0..config.epochs {
        if config.batch_size != 0 {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (i, chunk) in order.chunks(batch).enumerate() {
            let LossAndGrad {
                loss,
                grad,
                n_examples: seen,
            } = objective(&params, chunk)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { iteration });
            }
            let lr = schedule_lr(config, epoch, i, per_epoch);
            state.step(config, &mut params.flat, &grad, lr)?;
            total += loss * seen as f64;
            count += seen;
            iteration += 1;
        }
        history.push(total / count.max(1) as f64);
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gd_step() {
        let cfg = OptimizerConfig::gd(0.1, 1);
        let mut w = vec![0.0, 0.0];
        OptimizerState::new(2).step(&cfg, &mut w, &[1.0, -1.0], 0.1).unwrap();
        assert_eq!(w, vec![-0.1, 0.1]);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        for kind in [OptimizerKind::Gd, OptimizerKind::SgdMomentum, OptimizerKind::Adam] {
            let cfg = OptimizerConfig { kind, momentum: 0.9, ..OptimizerConfig::gd(0.1, 1) };
            let mut w = vec![0.3, -2.0, 5.0];
            let mut st = OptimizerState::new(3);
            for _ in 0..3 {
                st.step(&cfg, &mut w, &[0.0; 3], 0.1).unwrap();
            }
            assert_eq!(w, vec![0.3, -2.0, 5.0]);
        }
    }

    #[test]
    fn adam_first_step_has_magnitude_lr() {
        let cfg = OptimizerConfig::adam(1e-3, 1.0, 0, 1);
        for scale in [1e-4, 1.0, 1e4] {
            let mut w = vec![0.0, 0.0];
            OptimizerState::new(2)
                .step(&cfg, &mut w, &[scale, -2.0 * scale], 1e-3)
                .unwrap();
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
            assert!((w[0] + 1e-3).abs() < 1e-3 * 1e-3, "{scale}: {w:?}");
            assert!((w[1] - 1e-3).abs() < 1e-3 * 1e-3);
        }
    }

    #[test]
    fn momentum_without_decay_matches_reference() {
        let cfg = OptimizerConfig::sgd_warmup(0.1, 0.9, 0.0, 1, 1.0, 0, 1);
        let grads = [[0.5, -1.0], [0.25, 2.0], [-1.0, 0.1]];
        let mut w = vec![1.0, 1.0];
        let mut st = OptimizerState::new(2);
        let (mut rw, mut rv) = ([1.0f64, 1.0], [0.0f64, 0.0]);
        for g in grads {
            st.step(&cfg, &mut w, &g, 0.05).unwrap();
            for i in 0..2 {
                rv[i] = 0.9 * rv[i] + g[i];
                rw[i] -= 0.05 * rv[i];
            }
        }
        for i in 0..2 {
            assert!((w[i] - rw[i]).abs() <= 1e-15);
        }
    }

    #[test]
    fn weight_decay_enters_gradient() {
        let cfg = OptimizerConfig::sgd_warmup(0.1, 0.9, 5e-4, 1, 1.0, 0, 1);
        let mut w = vec![2.0];
        OptimizerState::new(1).step(&cfg, &mut w, &[0.0], 0.1).unwrap();
        assert!((w[0] - (2.0 - 0.1 * 5e-4 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn step_guards() {
        let cfg = OptimizerConfig::gd(0.1, 1);
        let mut st = OptimizerState::new(2);
        assert!(st.step(&cfg, &mut [0.0, 0.0], &[1.0], 0.1).is_err());
        assert!(matches!(
            st.step(&cfg, &mut [0.0, 0.0], &[1.0, f64::NAN], 0.1),
            Err(Error::NonFiniteGradient(1))
        ));
    }

    #[test]
    fn schedules() {
        let exp = OptimizerConfig::adam(1e-4, 0.98, 128, 50);
        assert!((schedule_lr(&exp, 2, 0, 10) - 9.604e-5).abs() < 1e-18);
        assert_eq!(schedule_lr(&exp, 0, 5, 10), 1e-4);

        let warm = OptimizerConfig::sgd_warmup(0.1, 0.9, 5e-4, 15, 0.95, 128, 50);
        assert_eq!(schedule_lr(&warm, 15, 0, 100), 0.1);
        assert_eq!(schedule_lr(&warm, 0, 0, 100), 0.0);
        assert!((schedule_lr(&warm, 0, 50, 100) - 0.1 * 0.5 / 15.0).abs() < 1e-15);
        assert!((schedule_lr(&warm, 7, 50, 100) - 0.1 * 7.5 / 15.0).abs() < 1e-15);
        assert!((schedule_lr(&warm, 17, 3, 100) - 0.1 * 0.95 * 0.95).abs() < 1e-15);
        // ramp approaches the peak continuously
        assert!((schedule_lr(&warm, 14, 99, 100) - 0.1 * 14.99 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = OptimizerConfig::gd(0.1, 1);
        assert!(c.validate().is_ok());
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        let mut c = OptimizerConfig::gd(0.1, 1);
        c.momentum = 1.0;
        assert!(c.validate().is_err());
        let c = OptimizerConfig::adam(1e-4, 1.5, 1, 1);
        assert!(c.validate().is_err());
        let json = r#"{"kind":"adam","learning_rate":1e-4,"schedule":{"kind":"exp_decay","rate":0.98},"batch_size":128,"epochs":50}"#;
        let parsed: OptimizerConfig = serde_json::from_str(json).unwrap();
        assert_eq!(parsed, OptimizerConfig::adam(1e-4, 0.98, 128, 50));
    }
}
