//! Conditional diffusion imputation for multivariate time series with
//! intra-window (complementary-mask contrastive) and inter-window
//! (mixup on the adjacent window) consistency.
//!
//! The pipeline runs, in order:
//!
//! - [`dataset`]: load, split, normalize and window a series, simulate
//!   evaluation missing patterns and pair each window with its successor.
//! - [`masking`]: self-supervised target masks and their complementary views.
//! - [`diffusion`]: noise schedule, closed-form noising and the reverse step.
//! - [`denoiser`]: the noise-prediction network, built on the reverse-mode
//!   [`tape`].
//! - [`training`]: denoising and contrastive losses and the training loop.
//! - [`sampler`]: ancestral sampling of imputations.
//! - [`metrics`]: point and probabilistic scores plus trivial baselines.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod diffusion;
mod error;
pub mod masking;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod synthetic;
pub mod tape;
pub mod training;

pub use error::{Error, Result};

use std::fmt::{Debug, Display};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type the network can be instantiated with (`f32` or `f64`).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}
