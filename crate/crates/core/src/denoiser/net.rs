// SPDX-License-Identifier: Apache-2.0

//! Residual MLP denoiser with hand-written backpropagation.
//!
//! ```text
//! h_0 = W_in x + b_in                         x = 2 * tensor - 1
//! z_l = W1_l h_{l-1} + b1_l + Wt_l tau(k)      tau = sinusoidal features
//! h_l = h_{l-1} + W2_l drop(silu(z_l)) + b2_l
//! logits = W_out h_L + b_out                   two logits per entry
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Denoiser;
use crate::deepsquish::TopologyTensor;
use crate::diffusion::{self, CategoricalField, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng::PatRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub channels: usize,
    pub side: usize,
    pub hidden: usize,
    pub depth: usize,
}

impl NetConfig {
    pub fn input_len(&self) -> usize {
        self.channels * self.side * self.side
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.side == 0 || self.hidden == 0 {
            return Err(Error::Parameter(format!("degenerate network config {self:?}")));
        }
        Ok(())
    }
}

/// Named parameter tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            name: name.into(),
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

const PER_BLOCK: usize = 5;
const W1: usize = 0;
const B1: usize = 1;
const WT: usize = 2;
const W2: usize = 3;
const B2: usize = 4;

/// Network parameters: `w_in, b_in`, five tensors per block, `w_out, b_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub config: NetConfig,
    pub tensors: Vec<Tensor>,
}

impl NetParams {
    /// All-zero parameters with the right shapes.
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let (d, h) = (config.input_len(), config.hidden);
        let mut tensors = vec![
            Tensor::zeros("w_in", vec![h, d]),
            Tensor::zeros("b_in", vec![h]),
        ];
        for l in 0..config.depth {
            tensors.push(Tensor::zeros(format!("block{l}.w1"), vec![h, h]));
            tensors.push(Tensor::zeros(format!("block{l}.b1"), vec![h]));
            tensors.push(Tensor::zeros(format!("block{l}.wt"), vec![h, h]));
            tensors.push(Tensor::zeros(format!("block{l}.w2"), vec![h, h]));
            tensors.push(Tensor::zeros(format!("block{l}.b2"), vec![h]));
        }
        tensors.push(Tensor::zeros("w_out", vec![2 * d, h]));
        tensors.push(Tensor::zeros("b_out", vec![2 * d]));
        Ok(NetParams { config, tensors })
    }

    /// Uniform fan-in scaled weights, zero biases, zero output head.
    pub fn init(config: NetConfig, rng: &mut PatRng) -> Result<Self> {
        let mut p = NetParams::zeros(config)?;
        let out = p.tensors.len() - 2;
        for (i, t) in p.tensors.iter_mut().enumerate() {
            if t.shape.len() == 2 && i != out {
                let bound = (3.0 / t.shape[1] as f64).sqrt();
                for v in &mut t.data {
                    *v = rng.gen_range(-bound..bound);
                }
            }
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    fn block(&self, l: usize, which: usize) -> &Tensor {
        &self.tensors[2 + l * PER_BLOCK + which]
    }

    fn out_w(&self) -> &Tensor {
        &self.tensors[self.tensors.len() - 2]
    }

    fn out_b(&self) -> &Tensor {
        &self.tensors[self.tensors.len() - 1]
    }

    /// Checks shapes against the config, e.g. after loading a checkpoint.
    pub fn validate(&self) -> Result<()> {
        let expect = NetParams::zeros(self.config)?;
        if expect.tensors.len() != self.tensors.len() {
            return Err(Error::Size(format!(
                "expected {} tensors, found {}",
                expect.tensors.len(),
                self.tensors.len()
            )));
        }
        for (a, b) in expect.tensors.iter().zip(&self.tensors) {
            if a.name != b.name || a.shape != b.shape || b.data.len() != a.data.len() {
                return Err(Error::Size(format!(
                    "tensor `{}` {:?} does not match expected `{}` {:?}",
                    b.name, b.shape, a.name, a.shape
                )));
            }
        }
        if !self.is_finite() {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// Sinusoidal features of the step index, one per hidden unit.
pub fn time_features(k: usize, dim: usize) -> Vec<f64> {
    let half = dim.div_ceil(2).max(1);
    (0..dim)
        .map(|i| {
            let freq = 1.0 / 10000f64.powf((i / 2) as f64 / half as f64);
            let arg = k as f64 * freq;
            if i % 2 == 0 {
                arg.sin()
            } else {
                arg.cos()
            }
        })
        .collect()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

// y += W x, W is rows x cols
fn matvec_acc(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (r, out) in y.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *out += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

// x += W^T y
fn matvec_t_acc(w: &[f64], y: &[f64], x: &mut [f64]) {
    let cols = x.len();
    for (r, &g) in y.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (xi, wi) in x.iter_mut().zip(row) {
            *xi += g * wi;
        }
    }
}

// G += y x^T
fn outer_acc(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &yr) in y.iter().enumerate() {
        if yr == 0.0 {
            continue;
        }
        let row = &mut g[r * cols..(r + 1) * cols];
        for (gi, xi) in row.iter_mut().zip(x) {
            *gi += yr * xi;
        }
    }
}

/// Activations kept for the backward pass.
struct Trace {
    input: Vec<f64>,
    time: Vec<f64>,
    // hidden states h_0 .. h_L
    hidden: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    // dropout scale per unit (0 or 1/(1-p)); empty when disabled
    masks: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn forward_trace(
    params: &NetParams,
    xk: &TopologyTensor,
    k: usize,
    dropout: Option<(f64, &mut PatRng)>,
) -> Result<Trace> {
    let cfg = params.config;
    if xk.channels() != cfg.channels || xk.side() != cfg.side {
        return Err(Error::Size(format!(
            "network expects {}x{}x{}, got {}x{}x{}",
            cfg.channels,
            cfg.side,
            cfg.side,
            xk.channels(),
            xk.side(),
            xk.side()
        )));
    }
    let h = cfg.hidden;
    let input: Vec<f64> = xk.data().iter().map(|&v| 2.0 * v as f64 - 1.0).collect();
    let time = time_features(k, h);
    let mut cur = params.tensors[1].data.clone();
    matvec_acc(&params.tensors[0].data, &input, &mut cur);
    let mut hidden = vec![cur];
    let mut pre = Vec::with_capacity(cfg.depth);
    let mut masks = Vec::with_capacity(cfg.depth);
    let mut dropout = dropout;
    for l in 0..cfg.depth {
        let prev = hidden.last().unwrap();
        let mut z = params.block(l, B1).data.clone();
        matvec_acc(&params.block(l, W1).data, prev, &mut z);
        matvec_acc(&params.block(l, WT).data, &time, &mut z);
        let mut a: Vec<f64> = z.iter().map(|&v| silu(v)).collect();
        if let Some((p, rng)) = dropout.as_mut() {
            let keep = 1.0 / (1.0 - *p);
            let mask: Vec<f64> = (0..h)
                .map(|_| if rng.gen::<f64>() < *p { 0.0 } else { keep })
                .collect();
            for (ai, mi) in a.iter_mut().zip(&mask) {
                *ai *= mi;
            }
            masks.push(mask);
        }
        let mut next = prev.clone();
        for (n, b) in next.iter_mut().zip(&params.block(l, B2).data) {
            *n += b;
        }
        matvec_acc(&params.block(l, W2).data, &a, &mut next);
        pre.push(z);
        hidden.push(next);
    }
    let mut logits = params.out_b().data.clone();
    matvec_acc(&params.out_w().data, hidden.last().unwrap(), &mut logits);
    Ok(Trace {
        input,
        time,
        hidden,
        pre,
        masks,
        logits,
    })
}

fn pair_logits(flat: &[f64]) -> Vec<[f64; 2]> {
    flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

/// Eval-mode logits, two per tensor entry.
pub fn net_forward(params: &NetParams, xk: &TopologyTensor, k: usize) -> Result<Vec<[f64; 2]>> {
    let trace = forward_trace(params, xk, k, None)?;
    if trace.logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    Ok(pair_logits(&trace.logits))
}

fn backward(params: &NetParams, trace: &Trace, dlogits: &[f64], grads: &mut NetParams) {
    let cfg = params.config;
    let h = cfg.hidden;
    let n = grads.tensors.len();
    let h_last = trace.hidden.last().unwrap();
    outer_acc(&mut grads.tensors[n - 2].data, dlogits, h_last);
    for (g, d) in grads.tensors[n - 1].data.iter_mut().zip(dlogits) {
        *g += d;
    }
    let mut dh = vec![0.0; h];
    matvec_t_acc(&params.out_w().data, dlogits, &mut dh);
    for l in (0..cfg.depth).rev() {
        let z = &trace.pre[l];
        let mut a: Vec<f64> = z.iter().map(|&v| silu(v)).collect();
        if let Some(mask) = trace.masks.get(l) {
            for (ai, mi) in a.iter_mut().zip(mask) {
                *ai *= mi;
            }
        }
        let base = 2 + l * PER_BLOCK;
        outer_acc(&mut grads.tensors[base + W2].data, &dh, &a);
        for (g, d) in grads.tensors[base + B2].data.iter_mut().zip(&dh) {
            *g += d;
        }
        let mut dz = vec![0.0; h];
        matvec_t_acc(&params.block(l, W2).data, &dh, &mut dz);
        if let Some(mask) = trace.masks.get(l) {
            for (d, m) in dz.iter_mut().zip(mask) {
                *d *= m;
            }
        }
        for (d, &zv) in dz.iter_mut().zip(z) {
            *d *= silu_grad(zv);
        }
        outer_acc(&mut grads.tensors[base + W1].data, &dz, &trace.hidden[l]);
        outer_acc(&mut grads.tensors[base + WT].data, &dz, &trace.time);
        for (g, d) in grads.tensors[base + B1].data.iter_mut().zip(&dz) {
            *g += d;
        }
        matvec_t_acc(&params.block(l, W1).data, &dz, &mut dh);
    }
    outer_acc(&mut grads.tensors[0].data, &dh, &trace.input);
    for (g, d) in grads.tensors[1].data.iter_mut().zip(&dh) {
        *g += d;
    }
}

/// One training example: clean tensor, its noisy version, and the step.
#[derive(Debug, Clone)]
pub struct Example {
    pub x0: TopologyTensor,
    pub xk: TopologyTensor,
    pub k: usize,
}

/// Mean loss over the batch and its exact gradient. With `dropout` the
/// masks are drawn from the given generator in example order.
pub fn net_gradient(
    params: &NetParams,
    batch: &[Example],
    lambda: f64,
    sched: &NoiseSchedule,
    dropout: Option<(f64, &mut PatRng)>,
) -> Result<(f64, NetParams)> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let mut grads = NetParams::zeros(params.config)?;
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    let mut dropout = dropout;
    for ex in batch {
        let drop = dropout.as_mut().map(|(p, rng)| (*p, &mut **rng));
        let trace = forward_trace(params, &ex.xk, ex.k, drop)?;
        let logits = pair_logits(&trace.logits);
        let (value, g) =
            diffusion::vlb_loss_with_grad(&logits, &ex.x0, &ex.xk, ex.k, lambda, sched)?;
        total += value.total * scale;
        let flat: Vec<f64> = g.iter().flat_map(|p| [p[0] * scale, p[1] * scale]).collect();
        backward(params, &trace, &flat, &mut grads);
    }
    if !total.is_finite() || !grads.is_finite() {
        return Err(Error::Numeric(format!("loss {total} or gradient not finite")));
    }
    Ok((total, grads))
}

/// Mean loss without gradients, eval mode.
pub fn net_loss(params: &NetParams, batch: &[Example], lambda: f64, sched: &NoiseSchedule) -> Result<f64> {
    let mut total = 0.0;
    for ex in batch {
        let logits = net_forward(params, &ex.xk, ex.k)?;
        total += diffusion::vlb_loss(&logits, &ex.x0, &ex.xk, ex.k, lambda, sched)?.total;
    }
    Ok(total / batch.len() as f64)
}

/// Rescales the gradient so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut NetParams, max_norm: f64) -> f64 {
    let norm = grads.tensors.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in &mut grads.tensors {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }
    norm
}

/// The trained network as a [`Denoiser`].
#[derive(Debug, Clone)]
pub struct NetDenoiser {
    pub params: NetParams,
}

impl Denoiser for NetDenoiser {
    fn evaluate(&self, xk: &TopologyTensor, k: usize) -> Result<CategoricalField> {
        let logits = net_forward(&self.params, xk, k)?;
        let probs = logits
            .into_iter()
            .map(|l| {
                let p1 = sigmoid(l[1] - l[0]);
                [1.0 - p1, p1]
            })
            .collect();
        Ok(CategoricalField { probs })
    }
}
