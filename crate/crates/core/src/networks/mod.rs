//! Shared-weight generator supernet, the progressively grown discriminator,
//! hinge losses and the alternating GAN update.

mod discriminator;
mod generator;
mod loss;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Graph, ParamStore, Tensor, Var};
use crate::Result;

pub use discriminator::{DiscMode, Discriminator};
pub use generator::{extract_child, forward_child, generator_param_names, grow, ChildModel, Supernet};
pub use loss::{hinge_d_loss, hinge_g_loss};
pub use train::{child_train_step, gan_train_step, GanStepOptions, StepLosses};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Maximum number of generator cells (and discriminator blocks).
    pub max_cells: usize,
    pub base_resolution: usize,
    /// Generator width, constant across cells.
    pub channels: usize,
    pub disc_channels: usize,
    pub z_dim: usize,
    pub image_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { max_cells: 3, base_resolution: 4, channels: 16, disc_channels: 16, z_dim: 64, image_channels: 3 }
    }
}

impl NetConfig {
    pub fn resolution_at(&self, cells: usize) -> usize {
        self.base_resolution << cells
    }
}

/// How a forward pass binds parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binding {
    Train,
    Frozen,
}

pub(crate) fn bind(g: &mut Graph, store: &ParamStore, name: &str, binding: Binding) -> Result<Var> {
    match binding {
        Binding::Train => g.param(store, name),
        Binding::Frozen => g.frozen(store, name),
    }
}

/// Scaled Gaussian init: `std = gain / sqrt(fan_in)`.
pub(crate) fn init_weight<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, gain: f32, rng: &mut R) -> Tensor {
    Tensor::randn(shape, gain / (fan_in as f32).sqrt(), rng)
}

pub(crate) const RELU_GAIN: f32 = std::f32::consts::SQRT_2;

/// Standard-normal latent batch.
pub fn sample_latent<R: Rng + ?Sized>(n: usize, z_dim: usize, rng: &mut R) -> Tensor {
    Tensor::randn(&[n, z_dim], 1.0, rng)
}
