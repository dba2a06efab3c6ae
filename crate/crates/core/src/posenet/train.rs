//! Mini-batch training with Adam and per-epoch learning-rate decay.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossConfig;
use super::net::PoseNet;
use super::pipeline::TrainingSample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volumes::VolumeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplicative learning-rate factor applied once per epoch.
    pub decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub focal_alpha: f64,
    pub focal_beta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, decay: 0.95, epochs: 50, batch_size: 32, lambda: 1.0, focal_alpha: 2.0, focal_beta: 4.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("train config: {what}")));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lambda >= 0.0) || !(self.focal_alpha > 0.0) || !(self.focal_beta > 0.0) {
            return bad("loss weights must be positive");
        }
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig { lambda: self.lambda, alpha: self.focal_alpha, beta: self.focal_beta }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay.powi(epoch as i32)
    }
}

/// Adam with bias correction; moments kept in double precision.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(net: &PoseNet<T>) -> Self {
        let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn update<T: Scalar>(&mut self, net: &mut PoseNet<T>, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((p, m), v) in net.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            for (((w, g), m), v) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.to_f64_lossy();
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let delta = lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *w = T::lit(w.to_f64_lossy() - delta);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    /// Mean per-joint error on the training samples during the epoch (meters).
    pub train_mpjpe: f64,
    /// Mean per-joint error on the held-out samples after the epoch (meters).
    pub holdout_mpjpe: Option<f64>,
}

/// Mean per-joint error of `net` over `samples` (meters).
pub fn mean_mpjpe<T: Scalar>(net: &PoseNet<T>, samples: &[TrainingSample<T>], grid: &VolumeGrid, cfg: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += net.evaluate(s, grid, cfg)?.mpjpe(&s.target);
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Train both stages end to end. Samples are visited in a seeded random order
/// each epoch and processed sequentially, so results are bit-reproducible.
pub fn train<T: Scalar>(
    net: &mut PoseNet<T>,
    samples: &[TrainingSample<T>],
    holdout: &[TrainingSample<T>],
    grid: &VolumeGrid,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if samples.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    let loss_cfg = cfg.loss();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last_finite = None;
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut err_sum) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            net.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let out = net.accumulate(&samples[i], grid, &loss_cfg, scale)?;
                if !out.total.is_finite() {
                    return Err(Error::DivergedLoss { epoch, last_finite_epoch: last_finite });
                }
                loss_sum += out.total;
                err_sum += out.mpjpe(&samples[i].target);
            }
            adam.update(net, lr);
        }
        let holdout_mpjpe = if holdout.is_empty() { None } else { Some(mean_mpjpe(net, holdout, grid, &loss_cfg)?) };
        let stats = EpochStats {
            epoch,
            learning_rate: lr,
            mean_loss: loss_sum / samples.len() as f64,
            train_mpjpe: err_sum / samples.len() as f64,
            holdout_mpjpe,
        };
        info!("epoch {} loss {:.5} train {:.1} mm", epoch, stats.mean_loss, stats.train_mpjpe * 1e3);
        last_finite = Some(epoch);
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}
