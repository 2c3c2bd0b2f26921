// SPDX-License-Identifier: Apache-2.0

//! Two-state discrete diffusion.
//!
//! Every tensor entry is corrupted independently by the symmetric kernel
//! `Q_k = [[1-b_k, b_k], [b_k, 1-b_k]]`. Products of such kernels stay in
//! the same family: `Q_1 ... Q_k` has diagonal `(1 + a_k) / 2` with
//! `a_k = prod_{i<=k} (1 - 2 b_i)`, so all marginals and posteriors have
//! closed forms. Probabilities are kept in linear space as `f64`.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deepsquish::TopologyTensor;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::rng::{self, PatRng};

/// Default weight of the auxiliary cross-entropy term.
pub const DEFAULT_LAMBDA: f64 = 0.001;

/// Linear `beta` schedule with cached cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    // alpha_bars[k] = prod_{i<=k} (1 - 2 beta_i), alpha_bars[0] = 1
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// `beta_k = (k-1)(beta_K - beta_1)/(K-1) + beta_1`.
    pub fn linear(steps: usize, beta1: f64, beta_k: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Parameter(format!("need at least 2 steps, got {steps}")));
        }
        if !(beta1 > 0.0 && beta1 <= beta_k && beta_k < 1.0) {
            return Err(Error::Parameter(format!(
                "require 0 < beta1 <= betaK < 1, got beta1={beta1}, betaK={beta_k}"
            )));
        }
        let betas = (1..=steps)
            .map(|k| (k - 1) as f64 * (beta_k - beta1) / (steps - 1) as f64 + beta1)
            .collect();
        NoiseSchedule::from_betas(betas)
    }

    /// Arbitrary schedule; each beta must lie strictly inside (0, 1).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Parameter("empty beta schedule".into()));
        }
        if let Some((i, b)) = betas.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Parameter(format!("beta_{} = {b} outside (0, 1)", i + 1)));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for b in &betas {
            let last = *alpha_bars.last().unwrap();
            alpha_bars.push(last * (1.0 - 2.0 * b));
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    /// Number of diffusion steps `K`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_k`, 1-based.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `prod_{i<=k} (1 - 2 beta_i)`; `k = 0` gives 1.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }

    pub fn kernel(&self, k: usize) -> TransitionKernel {
        transition(self.beta(k))
    }

    /// Kernel of steps `from+1 ..= to`; identity when `from == to`.
    pub fn span(&self, from: usize, to: usize) -> TransitionKernel {
        let a = self.betas[from..to].iter().map(|b| 1.0 - 2.0 * b).product();
        TransitionKernel::from_alpha(a)
    }

    fn check_step(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.steps() {
            return Err(Error::Parameter(format!(
                "step {k} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// Serializable schedule description, `{"K", "beta1", "betaK", "m"}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    #[serde(rename = "K")]
    pub steps: usize,
    pub beta1: f64,
    #[serde(rename = "betaK")]
    pub beta_k: f64,
    pub m: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 1000,
            beta1: 0.01,
            beta_k: 0.5,
            m: 1,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        if self.m == 0 || self.m > self.steps {
            return Err(Error::Parameter(format!(
                "jump m = {} must lie in 1..={}",
                self.m, self.steps
            )));
        }
        NoiseSchedule::linear(self.steps, self.beta1, self.beta_k)
    }
}

/// 2x2 row-stochastic matrix, `q[i][j] = P(next = j | current = i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionKernel {
    pub q: [[f64; 2]; 2],
}

impl TransitionKernel {
    pub fn identity() -> Self {
        TransitionKernel {
            q: [[1.0, 0.0], [0.0, 1.0]],
        }
    }

    /// Symmetric kernel with diagonal `(1 + a) / 2`.
    pub fn from_alpha(a: f64) -> Self {
        let stay = 0.5 * (1.0 + a);
        let flip = 0.5 * (1.0 - a);
        TransitionKernel {
            q: [[stay, flip], [flip, stay]],
        }
    }

    pub fn matmul(&self, rhs: &TransitionKernel) -> TransitionKernel {
        let mut q = [[0.0; 2]; 2];
        for (i, row) in q.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.q[i][0] * rhs.q[0][j] + self.q[i][1] * rhs.q[1][j];
            }
        }
        TransitionKernel { q }
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        (0..2).all(|i| {
            (self.q[i][0] + self.q[i][1] - 1.0).abs() <= tol
                && (self.q[0][i] + self.q[1][i] - 1.0).abs() <= tol
                && self.q[i][0] >= 0.0
                && self.q[i][1] >= 0.0
        })
    }

    pub fn max_abs_diff(&self, other: &TransitionKernel) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((self.q[i][j] - other.q[i][j]).abs());
            }
        }
        d
    }
}

pub fn linear_beta_schedule(steps: usize, beta1: f64, beta_k: f64) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(steps, beta1, beta_k)
}

pub fn transition(beta: f64) -> TransitionKernel {
    TransitionKernel {
        q: [[1.0 - beta, beta], [beta, 1.0 - beta]],
    }
}

/// `Q_1 Q_2 ... Q_k` in closed form.
pub fn cumulative_transition(sched: &NoiseSchedule, k: usize) -> Result<TransitionKernel> {
    sched.check_step(k)?;
    Ok(TransitionKernel::from_alpha(sched.alpha_bar(k)))
}

/// Per-entry probabilities `[p(0), p(1)]` over a tensor's entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalField {
    pub probs: Vec<[f64; 2]>,
}

impl CategoricalField {
    pub fn uniform(len: usize) -> Self {
        CategoricalField {
            probs: vec![[0.5, 0.5]; len],
        }
    }

    /// Point mass on the entries of `t`.
    pub fn point_mass(t: &TopologyTensor) -> Self {
        CategoricalField {
            probs: t
                .data()
                .iter()
                .map(|&v| if v == 1 { [0.0, 1.0] } else { [1.0, 0.0] })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        if self.probs.len() != len {
            return Err(Error::Size(format!(
                "field has {} entries, tensor has {len}",
                self.probs.len()
            )));
        }
        for (i, p) in self.probs.iter().enumerate() {
            if !(p[0] >= 0.0 && p[1] >= 0.0) || (p[0] + p[1] - 1.0).abs() > 1e-12 {
                return Err(Error::validation(format!(
                    "entry {i}: probabilities {:?} are not normalized",
                    p
                )));
            }
        }
        Ok(())
    }
}

/// `q(x_{k-m} | x_k, x_0)` for single states.
///
/// Proportional to `Q_{k-m+1..k}[s][x_k] * Qbar_{k-m}[x_0][s]`, normalized
/// by `Qbar_k[x_0][x_k]`; `m = 1` is the one-step posterior.
pub fn posterior(xk: u8, x0: u8, k: usize, m: usize, sched: &NoiseSchedule) -> Result<[f64; 2]> {
    let table = PosteriorTable::new(sched, k, m)?;
    Ok(table.get(xk, x0))
}

/// All four `q(x_{k-m} | x_k, x_0)` rows for one `(k, m)`.
#[derive(Debug, Clone, Copy)]
pub struct PosteriorTable {
    // rows[x_k][x_0] = [p(s=0), p(s=1)]
    rows: [[[f64; 2]; 2]; 2],
}

impl PosteriorTable {
    pub fn new(sched: &NoiseSchedule, k: usize, m: usize) -> Result<Self> {
        sched.check_step(k)?;
        if m == 0 || m > k {
            return Err(Error::Parameter(format!("jump {m} must satisfy 1 <= m <= k = {k}")));
        }
        let span = sched.span(k - m, k);
        let prior = TransitionKernel::from_alpha(sched.alpha_bar(k - m));
        let marginal = TransitionKernel::from_alpha(sched.alpha_bar(k));
        let mut rows = [[[0.0; 2]; 2]; 2];
        for xk in 0..2 {
            for x0 in 0..2 {
                let norm = marginal.q[x0][xk];
                if !(norm > 0.0) {
                    return Err(Error::Numeric(format!(
                        "degenerate posterior normalizer at k={k}, m={m}"
                    )));
                }
                for s in 0..2 {
                    rows[xk][x0][s] = span.q[s][xk] * prior.q[x0][s] / norm;
                }
            }
        }
        Ok(PosteriorTable { rows })
    }

    #[inline]
    pub fn get(&self, xk: u8, x0: u8) -> [f64; 2] {
        self.rows[xk as usize][x0 as usize]
    }

    /// Mixture over `x0` weighted by the denoiser: `p(x_{k-m} = 1 | x_k)`.
    #[inline]
    pub fn mix(&self, xk: u8, p_x0: [f64; 2]) -> [f64; 2] {
        let a = self.rows[xk as usize][0];
        let b = self.rows[xk as usize][1];
        [
            a[0] * p_x0[0] + b[0] * p_x0[1],
            a[1] * p_x0[0] + b[1] * p_x0[1],
        ]
    }
}

/// Draws `x_k ~ q(x_k | x_0)`: each entry flips with probability `(1 - a_k)/2`.
pub fn forward_sample(
    x0: &TopologyTensor,
    k: usize,
    sched: &NoiseSchedule,
    rng: &mut PatRng,
) -> Result<TopologyTensor> {
    sched.check_step(k)?;
    let flip = 0.5 * (1.0 - sched.alpha_bar(k));
    Ok(flip_entries(x0, flip, rng))
}

pub(crate) fn flip_entries(x0: &TopologyTensor, flip: f64, rng: &mut PatRng) -> TopologyTensor {
    let data = x0
        .data()
        .iter()
        .map(|&v| if rng.gen::<f64>() < flip { 1 - v } else { v })
        .collect();
    x0.with_data(data)
}

/// Exact per-entry distribution of `x_{k-m}` given `x_k` under the model.
pub fn reverse_distribution<D: Denoiser + ?Sized>(
    denoiser: &D,
    tk: &TopologyTensor,
    k: usize,
    m: usize,
    sched: &NoiseSchedule,
) -> Result<CategoricalField> {
    let table = PosteriorTable::new(sched, k, m)?;
    let field = denoiser.evaluate(tk, k)?;
    field.validate(tk.len())?;
    let probs = tk
        .data()
        .iter()
        .zip(&field.probs)
        .map(|(&xk, &p)| table.mix(xk, p))
        .collect();
    Ok(CategoricalField { probs })
}

/// One reverse jump `x_k -> x_{k-m}`, sampled entry by entry.
pub fn reverse_step<D: Denoiser + ?Sized>(
    denoiser: &D,
    tk: &TopologyTensor,
    k: usize,
    m: usize,
    sched: &NoiseSchedule,
    rng: &mut PatRng,
) -> Result<TopologyTensor> {
    let dist = reverse_distribution(denoiser, tk, k, m, sched)?;
    let data = dist
        .probs
        .iter()
        .map(|p| (rng.gen::<f64>() < p[1]) as u8)
        .collect();
    Ok(tk.with_data(data))
}

/// Steps visited by the sampler: `K, K-m, ...`, the last jump taking the
/// remainder. Each element is `(k, jump)`.
pub fn step_ladder(steps: usize, m: usize) -> Vec<(usize, usize)> {
    let m = m.max(1);
    let mut out = Vec::with_capacity(steps.div_ceil(m));
    let mut k = steps;
    while k > 0 {
        let jump = m.min(k);
        out.push((k, jump));
        k -= jump;
    }
    out
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub tensor: TopologyTensor,
    pub denoiser_calls: usize,
}

/// Ancestral sampling from uniform noise down to `x_0`, `m` steps per
/// denoiser call.
pub fn sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    channels: usize,
    side: usize,
    sched: &NoiseSchedule,
    m: usize,
    rng: &mut PatRng,
) -> Result<SampleOutcome> {
    if m == 0 {
        return Err(Error::Parameter("jump size m must be at least 1".into()));
    }
    let len = channels * side * side;
    let noise = (0..len).map(|_| rng.gen::<bool>() as u8).collect();
    let mut t = TopologyTensor::from_data(channels, side, noise)?;
    let mut calls = 0;
    for (k, jump) in step_ladder(sched.steps(), m) {
        t = reverse_step(denoiser, &t, k, jump, sched, rng)?;
        calls += 1;
    }
    Ok(SampleOutcome {
        tensor: t,
        denoiser_calls: calls,
    })
}

#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub tensor: TopologyTensor,
    pub denoiser_calls: usize,
    pub wall_us: u64,
}

/// Samples `count` tensors; item `i` uses the random stream `seed + i`.
/// Output order follows the item index.
pub fn sample_batch<D: Denoiser + ?Sized>(
    denoiser: &D,
    count: usize,
    channels: usize,
    side: usize,
    sched: &NoiseSchedule,
    m: usize,
    seed: u64,
    parallel: bool,
) -> Result<Vec<SampleRecord>> {
    let one = |i: usize| -> Result<SampleRecord> {
        let mut r = rng::stream(seed, i as u64);
        let start = Instant::now();
        let out = sample(denoiser, channels, side, sched, m, &mut r)?;
        Ok(SampleRecord {
            tensor: out.tensor,
            denoiser_calls: out.denoiser_calls,
            wall_us: start.elapsed().as_micros() as u64,
        })
    };
    if parallel {
        (0..count).into_par_iter().map(one).collect()
    } else {
        (0..count).map(one).collect()
    }
}

/// Loss components, each averaged over entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub kl: f64,
    pub cross_entropy: f64,
    pub total: f64,
}

fn softmax(l: [f64; 2]) -> [f64; 2] {
    let mx = l[0].max(l[1]);
    let e0 = (l[0] - mx).exp();
    let e1 = (l[1] - mx).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

fn log_softmax(l: [f64; 2]) -> [f64; 2] {
    let mx = l[0].max(l[1]);
    let lse = mx + ((l[0] - mx).exp() + (l[1] - mx).exp()).ln();
    [l[0] - lse, l[1] - lse]
}

/// Loss of one entry and its gradient with respect to the two logits.
pub(crate) fn entry_loss(
    logits: [f64; 2],
    x0: u8,
    xk: u8,
    table: &PosteriorTable,
    lambda: f64,
) -> (f64, f64, [f64; 2]) {
    let s = softmax(logits);
    let ls = log_softmax(logits);
    let q = table.get(xk, x0);
    let a = [table.get(xk, 0), table.get(xk, 1)];
    let mut kl = 0.0;
    // d KL / d s_j
    let mut gs = [0.0; 2];
    for state in 0..2 {
        if q[state] <= 0.0 {
            continue;
        }
        let p = a[0][state] * s[0] + a[1][state] * s[1];
        kl += q[state] * (q[state].ln() - p.ln());
        for (j, g) in gs.iter_mut().enumerate() {
            *g -= q[state] * a[j][state] / p;
        }
    }
    let ce = -ls[x0 as usize];
    let inner = s[0] * gs[0] + s[1] * gs[1];
    let mut grad = [0.0; 2];
    for i in 0..2 {
        let onehot = if i == x0 as usize { 1.0 } else { 0.0 };
        grad[i] = s[i] * (gs[i] - inner) + lambda * (s[i] - onehot);
    }
    (kl, ce, grad)
}

fn check_loss_inputs(
    logits: &[[f64; 2]],
    x0: &TopologyTensor,
    xk: &TopologyTensor,
    lambda: f64,
) -> Result<()> {
    if !x0.same_shape(xk) || logits.len() != x0.len() {
        return Err(Error::Size("logits, x0 and xk must have matching shapes".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Parameter(format!("lambda must be non-negative, got {lambda}")));
    }
    if logits.iter().any(|l| !l[0].is_finite() || !l[1].is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(())
}

/// Mean over entries of `KL(q(x_{k-1}|x_k,x_0) || p(x_{k-1}|x_k)) - lambda log p(x_0|x_k)`.
pub fn vlb_loss(
    logits: &[[f64; 2]],
    x0: &TopologyTensor,
    xk: &TopologyTensor,
    k: usize,
    lambda: f64,
    sched: &NoiseSchedule,
) -> Result<LossValue> {
    vlb_loss_with_grad(logits, x0, xk, k, lambda, sched).map(|(v, _)| v)
}

/// [`vlb_loss`] together with its gradient with respect to every logit.
pub fn vlb_loss_with_grad(
    logits: &[[f64; 2]],
    x0: &TopologyTensor,
    xk: &TopologyTensor,
    k: usize,
    lambda: f64,
    sched: &NoiseSchedule,
) -> Result<(LossValue, Vec<[f64; 2]>)> {
    check_loss_inputs(logits, x0, xk, lambda)?;
    let table = PosteriorTable::new(sched, k, 1)?;
    let n = logits.len() as f64;
    let (mut kl, mut ce) = (0.0, 0.0);
    let mut grads = Vec::with_capacity(logits.len());
    for ((l, &a), &b) in logits.iter().zip(x0.data()).zip(xk.data()) {
        let (e_kl, e_ce, g) = entry_loss(*l, a, b, &table, lambda);
        kl += e_kl;
        ce += e_ce;
        grads.push([g[0] / n, g[1] / n]);
    }
    let value = LossValue {
        kl: kl / n,
        cross_entropy: ce / n,
        total: (kl + lambda * ce) / n,
    };
    if !value.total.is_finite() {
        return Err(Error::Numeric(format!("loss is {}", value.total)));
    }
    Ok((value, grads))
}
