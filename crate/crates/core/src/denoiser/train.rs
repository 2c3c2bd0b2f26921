// SPDX-License-Identifier: Apache-2.0

//! Desk-scale training loop: uniform step sampling, dropout, global-norm
//! clipping and Adam.

use log::{debug, info};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::net::{clip_grad_norm, net_gradient, Example, NetConfig, NetParams};
use crate::deepsquish::TopologyTensor;
use crate::diffusion::{forward_sample, NoiseSchedule, DEFAULT_LAMBDA};
use crate::error::{Error, Result};
use crate::patops::AugmentConfig;
use crate::rng::{self, PatRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub depth: usize,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub dropout: f64,
    pub lambda: f64,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Passes of gated augmentation over the dataset before training.
    pub augment_rounds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: 64,
            depth: 2,
            iterations: 2000,
            batch_size: 128,
            learning_rate: 2e-4,
            grad_clip: 1.0,
            dropout: 0.1,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            augment: AugmentConfig::default(),
            augment_rounds: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Parameter(
                "hidden, iterations and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::Parameter(
                "learning_rate and grad_clip must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Parameter("lambda must be non-negative".into()));
        }
        self.augment.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: NetParams,
    /// Mean batch loss per iteration.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean loss over iterations `[from, to)`.
    pub fn mean_loss(&self, from: usize, to: usize) -> f64 {
        let w = &self.losses[from..to.min(self.losses.len())];
        w.iter().sum::<f64>() / w.len() as f64
    }
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    fn new(p: &NetParams) -> Self {
        let zeros: Vec<Vec<f64>> = p.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut NetParams, grads: &NetParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (i, (p, g)) in params.tensors.iter_mut().zip(&grads.tensors).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let gj = g.data[j];
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                p.data[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + EPS);
            }
        }
    }
}

fn draw_batch(
    dataset: &[TopologyTensor],
    size: usize,
    sched: &NoiseSchedule,
    rng: &mut PatRng,
) -> Result<Vec<Example>> {
    (0..size)
        .map(|_| {
            let x0 = dataset[rng.gen_range(0..dataset.len())].clone();
            let k = rng.gen_range(1..=sched.steps());
            let xk = forward_sample(&x0, k, sched, rng)?;
            Ok(Example { x0, xk, k })
        })
        .collect()
}

/// Trains a fresh network on `dataset`. Deterministic for a fixed seed.
pub fn train(dataset: &[TopologyTensor], cfg: &TrainConfig, sched: &NoiseSchedule) -> Result<TrainReport> {
    cfg.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::validation("training set is empty"))?;
    if let Some(i) = dataset.iter().position(|t| !t.same_shape(first)) {
        return Err(Error::validation(format!(
            "tensor {i} has a different shape from tensor 0"
        )));
    }
    let net = NetConfig {
        channels: first.channels(),
        side: first.side(),
        hidden: cfg.hidden,
        depth: cfg.depth,
    };
    let mut rng = rng::seeded(cfg.seed);
    let mut params = NetParams::init(net, &mut rng)?;
    let mut adam = Adam::new(&params);
    let mut losses = Vec::with_capacity(cfg.iterations);
    info!(
        "training {} parameters on {} tensors for {} iterations",
        params.len(),
        dataset.len(),
        cfg.iterations
    );
    for it in 0..cfg.iterations {
        let batch = draw_batch(dataset, cfg.batch_size, sched, &mut rng)?;
        let dropout = (cfg.dropout > 0.0).then_some((cfg.dropout, &mut rng));
        let (loss, mut grads) = net_gradient(&params, &batch, cfg.lambda, sched, dropout)
            .map_err(|e| Error::Numeric(format!("iteration {it}: {e}")))?;
        let norm = clip_grad_norm(&mut grads, cfg.grad_clip);
        adam.step(&mut params, &grads, cfg.learning_rate);
        if !params.is_finite() {
            return Err(Error::Numeric(format!(
                "parameters diverged at iteration {it} (loss {loss}, grad norm {norm})"
            )));
        }
        if it % 100 == 0 || it + 1 == cfg.iterations {
            debug!("iter {it} loss {loss:.6} grad_norm {norm:.4}");
        }
        losses.push(loss);
    }
    Ok(TrainReport { params, losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deepsquish::fold;
    use crate::denoiser::{Denoiser, NetDenoiser};
    use crate::diffusion::{linear_beta_schedule, sample_batch};
    use crate::drc::prefilter;
    use crate::deepsquish::unfold;
    use crate::toy;

    fn toy_set() -> Vec<TopologyTensor> {
        toy::toy_topologies()
            .iter()
            .map(|t| fold(t, 1).unwrap())
            .collect()
    }

    fn toy_cfg(iterations: usize) -> TrainConfig {
        TrainConfig {
            hidden: 32,
            depth: 2,
            iterations,
            batch_size: 32,
            learning_rate: 2e-3,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_follow_reference_setup() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 2e-4);
        assert_eq!(c.dropout, 0.1);
        assert_eq!(c.grad_clip, 1.0);
        assert_eq!(c.lambda, 0.001);
    }

    #[test]
    fn rejects_bad_config() {
        let s = linear_beta_schedule(10, 0.05, 0.4).unwrap();
        let data = toy_set();
        let mut c = toy_cfg(5);
        c.dropout = 1.0;
        assert!(train(&data, &c, &s).is_err());
        assert!(train(&[], &toy_cfg(5), &s).is_err());
    }

    #[test]
    fn seeded_rerun_is_identical() {
        let s = linear_beta_schedule(50, 0.01, 0.5).unwrap();
        let data = toy_set();
        let a = train(&data, &toy_cfg(30), &s).unwrap();
        let b = train(&data, &toy_cfg(30), &s).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn toy_loss_halves_and_samples_pass_prefilter() {
        let s = linear_beta_schedule(50, 0.01, 0.5).unwrap();
        let data = toy_set();
        let report = train(&data, &toy_cfg(2000), &s).unwrap();
        let early = report.mean_loss(0, 10);
        let late = report.mean_loss(1900, 2000);
        assert!(late <= 0.5 * early, "early {early} late {late}");

        let den = NetDenoiser { params: report.params };
        let _ = den.evaluate(&data[0], 3).unwrap();
        let out = sample_batch(&den, 200, 1, 4, &s, 1, 5, true).unwrap();
        let ok = out
            .iter()
            .filter(|r| prefilter(&unfold(&r.tensor)))
            .count();
        assert!(ok >= 180, "{ok}/200 samples pass the prefilter");
    }
}
