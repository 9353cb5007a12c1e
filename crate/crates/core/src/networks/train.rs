use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generator::plan_forward;
use super::loss::{hinge_d_loss_graph, hinge_g_loss_graph};
use super::{sample_latent, Binding, ChildModel, DiscMode, Discriminator, Supernet};
use crate::error::{Error, Result};
use crate::genotype::{to_layer_plan, Genotype, LayerPlan};
use crate::tensor::{adam_step, AdamConfig, Graph, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanStepOptions {
    pub g_batch: usize,
    pub g_lr: f32,
    pub d_lr: f32,
}

impl Default for GanStepOptions {
    fn default() -> Self {
        GanStepOptions { g_batch: 128, g_lr: 2e-4, d_lr: 2e-4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub d_loss: f32,
    pub g_loss: f32,
}

fn apply_adam<'a>(store: &mut ParamStore, names: impl IntoIterator<Item = &'a str>, cfg: &AdamConfig) -> Result<()> {
    for name in names {
        adam_step(name, store.get_mut(name)?, cfg)?;
    }
    Ok(())
}

fn finite_loss(value: f32, which: &str, d_loss: Option<f32>) -> Result<f32> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Training(format!("{which} loss is {value} (discriminator loss this step: {d_loss:?})")))
    }
}

fn adversarial_step<R: Rng + ?Sized>(
    gen_params: &mut ParamStore,
    plan: &LayerPlan,
    z_dim: usize,
    disc: &mut Discriminator,
    real: &Tensor,
    rng: &mut R,
    opts: &GanStepOptions,
) -> Result<StepLosses> {
    let d_batch = real.dim(0);
    if d_batch == 0 || opts.g_batch == 0 {
        return Err(Error::Input("empty training batch".into()));
    }

    // Discriminator update on real ∪ fake with the generator frozen.
    let z = sample_latent(d_batch, z_dim, rng);
    let fake = {
        let mut g = Graph::new();
        let zv = g.input(z);
        let out = plan_forward(&mut g, gen_params, plan, zv, Binding::Frozen)?;
        g.value(out).clone()
    };
    let mut g = Graph::new();
    let x = g.input(Tensor::cat_rows(&[real.clone(), fake])?);
    let scores = disc.forward_graph(&mut g, x, DiscMode::Train, Binding::Train)?;
    let scores = g.reshape(scores, &[1, 2 * d_batch])?;
    let real_scores = g.slice_cols(scores, 0, d_batch)?;
    let fake_scores = g.slice_cols(scores, d_batch, 2 * d_batch)?;
    let d_loss_var = hinge_d_loss_graph(&mut g, real_scores, fake_scores);
    let d_loss = finite_loss(g.value(d_loss_var).item(), "discriminator", None)?;
    let grads = g.backward(d_loss_var)?;
    disc.params_mut().zero_grad();
    grads.accumulate_into(disc.params_mut())?;
    let d_names: Vec<String> = g.param_names().map(String::from).collect();
    drop(g);
    apply_adam(disc.params_mut(), d_names.iter().map(String::as_str), &AdamConfig::gan(opts.d_lr))?;

    // Generator update through the sampled path with the discriminator frozen.
    let z = sample_latent(opts.g_batch, z_dim, rng);
    let mut g = Graph::new();
    let zv = g.input(z);
    let fake = plan_forward(&mut g, gen_params, plan, zv, Binding::Train)?;
    let scores = disc.forward_graph(&mut g, fake, DiscMode::Eval, Binding::Frozen)?;
    let g_loss_var = hinge_g_loss_graph(&mut g, scores);
    let g_loss = finite_loss(g.value(g_loss_var).item(), "generator", Some(d_loss))?;
    let grads = g.backward(g_loss_var)?;
    let g_names: Vec<String> = g.param_names().map(String::from).collect();
    for name in &g_names {
        gen_params.get_mut(name)?.zero_grad();
    }
    grads.accumulate_into(gen_params)?;
    drop(g);
    apply_adam(gen_params, g_names.iter().map(String::as_str), &AdamConfig::gan(opts.g_lr))?;

    Ok(StepLosses { d_loss, g_loss })
}

/// One discriminator update on `real` (plus as many fakes), then one
/// generator update through `genotype`'s slice of the supernet.
///
/// Only the parameters on the sampled path are stepped.
pub fn gan_train_step<R: Rng + ?Sized>(
    supernet: &mut Supernet,
    disc: &mut Discriminator,
    genotype: &Genotype,
    real: &Tensor,
    rng: &mut R,
    opts: &GanStepOptions,
) -> Result<StepLosses> {
    supernet.check(genotype)?;
    let plan = to_layer_plan(genotype)?;
    let z_dim = supernet.config().z_dim;
    adversarial_step(supernet.params_mut(), &plan, z_dim, disc, real, rng, opts)
}

/// The same update for a standalone child network.
pub fn child_train_step<R: Rng + ?Sized>(
    child: &mut ChildModel,
    disc: &mut Discriminator,
    real: &Tensor,
    rng: &mut R,
    opts: &GanStepOptions,
) -> Result<StepLosses> {
    let plan = to_layer_plan(&child.genotype)?;
    let z_dim = child.config.z_dim;
    adversarial_step(&mut child.params, &plan, z_dim, disc, real, rng, opts)
}
