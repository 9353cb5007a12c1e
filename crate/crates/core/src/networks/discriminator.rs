use std::collections::BTreeMap;

use rand::Rng;

use super::{bind, init_weight, Binding, NetConfig, RELU_GAIN};
use crate::error::{Error, Result};
use crate::tensor::{spectral_power_iteration, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiscMode {
    /// One power iteration per weight per call; the `u` vectors are updated.
    Train,
    /// Uses the stored `u` vectors as they are.
    Eval,
}

/// SN-GAN style residual discriminator.
///
/// A shared 1×1 `from_image` stem, then one down-block per stage from the
/// highest resolution down to the base resolution, ReLU, global sum and a
/// linear head. Block `b` maps `base·2^(b+1)` to `base·2^b`; growing adds the
/// next block in front. Every weight is spectrally normalized at use.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    config: NetConfig,
    stages: usize,
    params: ParamStore,
    u: BTreeMap<String, Vec<f32>>,
}

fn block_name(b: usize, layer: &str, field: &str) -> String {
    format!("disc.block{b}.{layer}.{field}")
}

const FROM_IMAGE_W: &str = "disc.from_image.weight";
const FROM_IMAGE_B: &str = "disc.from_image.bias";
const HEAD_W: &str = "disc.head.weight";
const HEAD_B: &str = "disc.head.bias";

fn random_unit<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f32> {
    let t = Tensor::randn(&[len], 1.0, rng);
    let norm = t.data().iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
    t.data().iter().map(|v| v / norm).collect()
}

impl Discriminator {
    pub fn build<R: Rng + ?Sized>(config: NetConfig, stages: usize, rng: &mut R) -> Result<Self> {
        if stages == 0 || stages > config.max_cells {
            return Err(Error::Stage(format!("cannot build a discriminator with {stages} blocks (max {})", config.max_cells)));
        }
        let ch = config.disc_channels;
        let mut d = Discriminator { config, stages: 0, params: ParamStore::new(), u: BTreeMap::new() };
        let img = d.config.image_channels;
        d.add_weight(FROM_IMAGE_W, init_weight(&[ch, img, 1, 1], img, 1.0, rng), rng);
        d.params.insert(FROM_IMAGE_B, Tensor::zeros(&[ch]));
        d.add_weight(HEAD_W, init_weight(&[1, ch], ch, 1.0, rng), rng);
        d.params.insert(HEAD_B, Tensor::zeros(&[1]));
        for _ in 0..stages {
            d.add_block(rng);
        }
        Ok(d)
    }

    fn add_weight<R: Rng + ?Sized>(&mut self, name: &str, value: Tensor, rng: &mut R) {
        let rows = value.dim(0);
        self.params.insert(name, value);
        self.u.insert(name.to_string(), random_unit(rows, rng));
    }

    fn add_block<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let ch = self.config.disc_channels;
        let b = self.stages;
        for layer in ["conv1", "conv2"] {
            self.add_weight(&block_name(b, layer, "weight"), init_weight(&[ch, ch, 3, 3], ch * 9, RELU_GAIN, rng), rng);
            self.params.insert(block_name(b, layer, "bias"), Tensor::zeros(&[ch]));
        }
        self.stages += 1;
    }

    pub(crate) fn grow<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if self.stages >= self.config.max_cells {
            return Err(Error::Stage(format!("discriminator already has the maximum of {} blocks", self.config.max_cells)));
        }
        self.add_block(rng);
        Ok(())
    }

    pub fn from_parts(config: NetConfig, stages: usize, params: ParamStore, u: BTreeMap<String, Vec<f32>>) -> Result<Self> {
        let d = Discriminator { config, stages, params, u };
        for name in d.normalized_weights() {
            let rows = d.params.value(&name)?.dim(0);
            match d.u.get(&name) {
                Some(u) if u.len() == rows => {}
                _ => return Err(Error::State(format!("missing or malformed spectral vector for `{name}`"))),
            }
        }
        Ok(d)
    }

    pub fn reinitialize<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        *self = Discriminator::build(self.config.clone(), self.stages, rng)?;
        Ok(())
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn input_resolution(&self) -> usize {
        self.config.resolution_at(self.stages)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn u_vectors(&self) -> &BTreeMap<String, Vec<f32>> {
        &self.u
    }

    /// Names of the spectrally normalized weights.
    pub fn normalized_weights(&self) -> Vec<String> {
        let mut names = vec![FROM_IMAGE_W.to_string(), HEAD_W.to_string()];
        for b in 0..self.stages {
            names.push(block_name(b, "conv1", "weight"));
            names.push(block_name(b, "conv2", "weight"));
        }
        names
    }

    /// Run `iters` power iterations on every weight without a forward pass.
    pub fn converge_spectral(&mut self, iters: usize) -> Result<()> {
        for name in self.normalized_weights() {
            let est = spectral_power_iteration(self.params.value(&name)?, &self.u[&name], iters)?;
            self.u.insert(name, est.u);
        }
        Ok(())
    }

    fn sn_weight(&mut self, g: &mut Graph, name: &str, mode: DiscMode, binding: Binding) -> Result<Var> {
        let w = bind(g, &self.params, name, binding)?;
        let iters = usize::from(mode == DiscMode::Train);
        let est = spectral_power_iteration(self.params.value(name)?, &self.u[name], iters)?;
        if mode == DiscMode::Train {
            self.u.insert(name.to_string(), est.u.clone());
        }
        g.spectral_normalize(w, &est.u, &est.v)
    }

    pub(crate) fn forward_graph(&mut self, g: &mut Graph, x: Var, mode: DiscMode, binding: Binding) -> Result<Var> {
        let shape = g.value(x).shape().to_vec();
        let res = self.input_resolution();
        if shape.len() != 4 || shape[1] != self.config.image_channels || shape[2] != res || shape[3] != res {
            return Err(Error::Stage(format!(
                "discriminator at stage {} expects N×{}×{res}×{res} images, got {shape:?}",
                self.stages - 1,
                self.config.image_channels
            )));
        }
        let w = self.sn_weight(g, FROM_IMAGE_W, mode, binding)?;
        let b = bind(g, &self.params, FROM_IMAGE_B, binding)?;
        let mut h = g.conv2d(x, w, Some(b), 1, 0)?;
        for blk in (0..self.stages).rev() {
            let shortcut = g.avg_pool2(h)?;
            let mut r = h;
            for layer in ["conv1", "conv2"] {
                r = g.relu(r);
                let w = self.sn_weight(g, &block_name(blk, layer, "weight"), mode, binding)?;
                let b = bind(g, &self.params, &block_name(blk, layer, "bias"), binding)?;
                r = g.conv2d(r, w, Some(b), 1, 1)?;
            }
            let r = g.avg_pool2(r)?;
            h = g.add(r, shortcut)?;
        }
        let h = g.relu(h);
        let h = g.sum_spatial(h)?;
        let w = self.sn_weight(g, HEAD_W, mode, binding)?;
        let b = bind(g, &self.params, HEAD_B, binding)?;
        let scores = g.linear(h, w, Some(b))?;
        let n = g.value(scores).dim(0);
        g.reshape(scores, &[n])
    }

    /// One score per image.
    pub fn forward(&mut self, images: &Tensor, mode: DiscMode) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(images.clone());
        let out = self.forward_graph(&mut g, x, mode, Binding::Frozen)?;
        Ok(g.value(out).clone())
    }

    /// Multiply one weight in place (test and diagnostics hook).
    pub fn scale_weight(&mut self, name: &str, c: f32) -> Result<()> {
        let p = self.params.get_mut(name)?;
        p.value = p.value.scale(c);
        Ok(())
    }
}
