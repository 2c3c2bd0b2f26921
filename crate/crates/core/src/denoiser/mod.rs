// SPDX-License-Identifier: Apache-2.0

//! Models of `p(x_0 | x_k)`.
//!
//! [`BayesDenoiser`] is exact inference against a finite dataset and serves
//! as a reference; [`NetDenoiser`] wraps the trainable residual network.

mod bayes;
pub mod checkpoint;
pub mod net;
pub mod train;

pub use bayes::BayesDenoiser;
pub use net::{NetConfig, NetDenoiser, NetParams};
pub use train::{train, TrainConfig, TrainReport};

use crate::deepsquish::TopologyTensor;
use crate::diffusion::CategoricalField;
use crate::error::{Error, Result};

/// Predicts a per-entry distribution over the clean tensor `x_0` from a
/// noisy tensor at step `k`. Implementations must be deterministic.
pub trait Denoiser: Sync {
    fn evaluate(&self, xk: &TopologyTensor, k: usize) -> Result<CategoricalField>;
}

/// Always predicts one fixed tensor.
#[derive(Debug, Clone)]
pub struct PointMassDenoiser(pub TopologyTensor);

impl Denoiser for PointMassDenoiser {
    fn evaluate(&self, xk: &TopologyTensor, _k: usize) -> Result<CategoricalField> {
        if !xk.same_shape(&self.0) {
            return Err(Error::Size("input shape differs from the fixed pattern".into()));
        }
        Ok(CategoricalField::point_mass(&self.0))
    }
}

/// Predicts `[0.5, 0.5]` everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformDenoiser;

impl Denoiser for UniformDenoiser {
    fn evaluate(&self, xk: &TopologyTensor, _k: usize) -> Result<CategoricalField> {
        Ok(CategoricalField::uniform(xk.len()))
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn evaluate(&self, xk: &TopologyTensor, k: usize) -> Result<CategoricalField> {
        (**self).evaluate(xk, k)
    }
}
