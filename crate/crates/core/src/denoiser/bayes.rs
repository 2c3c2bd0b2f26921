// SPDX-License-Identifier: Apache-2.0

use super::Denoiser;
use crate::deepsquish::TopologyTensor;
use crate::diffusion::{CategoricalField, NoiseSchedule};
use crate::error::{Error, Result};

/// Exact posterior over a finite dataset with an empirical-frequency prior.
///
/// `p(x_0 = T | x_k) ∝ prior(T) * prod_e q(x_k[e] | T[e])`; the returned
/// field is the per-entry marginal of that posterior.
#[derive(Debug, Clone)]
pub struct BayesDenoiser {
    patterns: Vec<TopologyTensor>,
    sched: NoiseSchedule,
}

impl BayesDenoiser {
    pub fn new(patterns: Vec<TopologyTensor>, sched: NoiseSchedule) -> Result<Self> {
        let first = patterns
            .first()
            .ok_or_else(|| Error::validation("Bayes denoiser needs a non-empty dataset"))?;
        if let Some(i) = patterns.iter().position(|p| !p.same_shape(first)) {
            return Err(Error::Size(format!("dataset entry {i} has a different shape")));
        }
        Ok(BayesDenoiser { patterns, sched })
    }

    pub fn patterns(&self) -> &[TopologyTensor] {
        &self.patterns
    }

    /// Posterior weight of every dataset entry given `x_k`.
    pub fn posterior_weights(&self, xk: &TopologyTensor, k: usize) -> Result<Vec<f64>> {
        if !xk.same_shape(&self.patterns[0]) {
            return Err(Error::Size("input shape differs from the dataset".into()));
        }
        if k == 0 || k > self.sched.steps() {
            return Err(Error::Parameter(format!("step {k} out of range")));
        }
        let a = self.sched.alpha_bar(k);
        let (ln_stay, ln_flip) = ((0.5 * (1.0 + a)).ln(), (0.5 * (1.0 - a)).ln());
        let n = xk.len();
        let logw: Vec<f64> = self
            .patterns
            .iter()
            .map(|p| {
                let d = p.data().iter().zip(xk.data()).filter(|(a, b)| a != b).count();
                d as f64 * ln_flip + (n - d) as f64 * ln_stay
            })
            .collect();
        let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok(w.into_iter().map(|v| v / z).collect())
    }
}

impl Denoiser for BayesDenoiser {
    fn evaluate(&self, xk: &TopologyTensor, k: usize) -> Result<CategoricalField> {
        let w = self.posterior_weights(xk, k)?;
        let mut p1 = vec![0.0; xk.len()];
        for (p, &wt) in self.patterns.iter().zip(&w) {
            for (acc, &v) in p1.iter_mut().zip(p.data()) {
                if v == 1 {
                    *acc += wt;
                }
            }
        }
        Ok(CategoricalField {
            probs: p1
                .into_iter()
                .map(|v| {
                    let v = v.clamp(0.0, 1.0);
                    [1.0 - v, v]
                })
                .collect(),
        })
    }
}
