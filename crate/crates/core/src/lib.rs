// SPDX-License-Identifier: Apache-2.0

//! Layout pattern generation.
//!
//! Layouts are encoded losslessly as squish patterns ([`geometry`]), folded
//! into multi-channel binary tensors ([`deepsquish`]), sampled with a
//! two-state discrete diffusion model ([`diffusion`], [`denoiser`]) and
//! given legal geometry by a constraint solver ([`legalize`]). The
//! [`drc`] module checks results independently; [`patops`] provides
//! legality-gated augmentation and library diversity statistics.

pub mod deepsquish;
pub mod denoiser;
pub mod diffusion;
pub mod drc;
pub mod error;
pub mod geometry;
pub mod legalize;
pub mod patops;
pub mod rng;
pub mod topology;
pub mod toy;

pub use error::{Error, Result};
