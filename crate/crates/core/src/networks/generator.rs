use std::collections::BTreeSet;

use rand::Rng;

use super::{bind, init_weight, Binding, Discriminator, NetConfig, RELU_GAIN};
use crate::error::{Error, Result};
use crate::genotype::{to_layer_plan, ConvType, Genotype, LayerPlan, MergeInput, NormType, PlanOp, UpsampleType};
use crate::tensor::{Graph, NormMode, ParamStore, Tensor, UpsampleMode, Var};

/// Samples per chunk when generating outside of training. Batch
/// normalization uses per-chunk statistics, so this is part of the
/// evaluation contract.
pub const EVAL_CHUNK: usize = 64;

pub(crate) mod names {
    use crate::genotype::{ConvType, NormType};

    pub const PROJ_W: &str = "gen.proj.weight";
    pub const PROJ_B: &str = "gen.proj.bias";
    pub const TO_IMAGE_W: &str = "gen.to_image.weight";
    pub const TO_IMAGE_B: &str = "gen.to_image.bias";

    pub fn conv(cell: usize, style: ConvType, block: usize, field: &str) -> String {
        format!("gen.cell{cell}.{}.conv{block}.{field}", style.tag())
    }

    pub fn norm(cell: usize, style: ConvType, block: usize, norm: NormType, field: &str) -> String {
        format!("gen.cell{cell}.{}.norm{block}.{}.{field}", style.tag(), norm.tag())
    }

    pub fn deconv(cell: usize, field: &str) -> String {
        format!("gen.cell{cell}.deconv.{field}")
    }

    pub fn skip_conv(cell: usize, source: usize, field: &str) -> String {
        format!("gen.cell{cell}.skip{source}.conv.{field}")
    }

    pub fn skip_deconv(cell: usize, source: usize, step: usize, field: &str) -> String {
        format!("gen.cell{cell}.skip{source}.deconv{step}.{field}")
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Gaussian { fan_in: usize, gain: f32 },
    Zeros,
    Ones,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

impl ParamSpec {
    fn new(name: String, shape: &[usize], init: Init) -> Self {
        ParamSpec { name, shape: shape.to_vec(), init }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        match self.init {
            Init::Gaussian { fan_in, gain } => init_weight(&self.shape, fan_in, gain, rng),
            Init::Zeros => Tensor::zeros(&self.shape),
            Init::Ones => Tensor::full(&self.shape, 1.0),
        }
    }
}

fn stem_specs(cfg: &NetConfig) -> Vec<ParamSpec> {
    let proj_out = cfg.channels * cfg.base_resolution * cfg.base_resolution;
    vec![
        ParamSpec::new(names::PROJ_W.into(), &[proj_out, cfg.z_dim], Init::Gaussian { fan_in: cfg.z_dim, gain: 1.0 }),
        ParamSpec::new(names::PROJ_B.into(), &[proj_out], Init::Zeros),
        ParamSpec::new(names::TO_IMAGE_W.into(), &[cfg.image_channels, cfg.channels, 1, 1], Init::Gaussian { fan_in: cfg.channels, gain: 1.0 }),
        ParamSpec::new(names::TO_IMAGE_B.into(), &[cfg.image_channels], Init::Zeros),
    ]
}

/// Every parameter of cell `s`, over all architectural choices.
fn cell_specs(cfg: &NetConfig, s: usize) -> Vec<ParamSpec> {
    let ch = cfg.channels;
    let conv_init = Init::Gaussian { fan_in: ch * 9, gain: RELU_GAIN };
    // A stride-2, 4×4 transposed convolution feeds each output from ch·4 taps.
    let deconv_init = Init::Gaussian { fan_in: ch * 4, gain: RELU_GAIN };
    let mut specs = Vec::new();
    for style in ConvType::ALL {
        for block in 0..2 {
            specs.push(ParamSpec::new(names::conv(s, style, block, "weight"), &[ch, ch, 3, 3], conv_init));
            specs.push(ParamSpec::new(names::conv(s, style, block, "bias"), &[ch], Init::Zeros));
            for norm in [NormType::Batch, NormType::Instance] {
                specs.push(ParamSpec::new(names::norm(s, style, block, norm, "gamma"), &[ch], Init::Ones));
                specs.push(ParamSpec::new(names::norm(s, style, block, norm, "beta"), &[ch], Init::Zeros));
            }
        }
    }
    specs.push(ParamSpec::new(names::deconv(s, "weight"), &[ch, ch, 4, 4], deconv_init));
    specs.push(ParamSpec::new(names::deconv(s, "bias"), &[ch], Init::Zeros));
    for j in 0..s {
        specs.push(ParamSpec::new(names::skip_conv(s, j, "weight"), &[ch, ch, 1, 1], Init::Gaussian { fan_in: ch, gain: 1.0 }));
        specs.push(ParamSpec::new(names::skip_conv(s, j, "bias"), &[ch], Init::Zeros));
        for step in 0..s - j {
            specs.push(ParamSpec::new(names::skip_deconv(s, j, step, "weight"), &[ch, ch, 4, 4], deconv_init));
            specs.push(ParamSpec::new(names::skip_deconv(s, j, step, "bias"), &[ch], Init::Zeros));
        }
    }
    specs
}

fn generator_specs(cfg: &NetConfig, cells: usize) -> Vec<ParamSpec> {
    let mut specs = stem_specs(cfg);
    for s in 0..cells {
        specs.extend(cell_specs(cfg, s));
    }
    specs
}

/// Names of the parameters a genotype's child network reads.
pub fn generator_param_names(genotype: &Genotype) -> Result<BTreeSet<String>> {
    let plan = to_layer_plan(genotype)?;
    let mut out = BTreeSet::new();
    let mut cell_mode = UpsampleType::Nearest;
    for op in &plan.ops {
        match op {
            PlanOp::LatentProjection { .. } => {
                out.insert(names::PROJ_W.into());
                out.insert(names::PROJ_B.into());
            }
            PlanOp::Upsample { cell, mode, .. } => {
                cell_mode = *mode;
                if *mode == UpsampleType::Deconv {
                    out.insert(names::deconv(*cell, "weight"));
                    out.insert(names::deconv(*cell, "bias"));
                }
            }
            PlanOp::ConvBlock { cell, block, style, norm, .. } => {
                out.insert(names::conv(*cell, *style, *block, "weight"));
                out.insert(names::conv(*cell, *style, *block, "bias"));
                if *norm != NormType::None {
                    out.insert(names::norm(*cell, *style, *block, *norm, "gamma"));
                    out.insert(names::norm(*cell, *style, *block, *norm, "beta"));
                }
            }
            PlanOp::SkipIn { cell, source, .. } => {
                out.insert(names::skip_conv(*cell, *source, "weight"));
                out.insert(names::skip_conv(*cell, *source, "bias"));
                if cell_mode == UpsampleType::Deconv {
                    for step in 0..cell - source {
                        out.insert(names::skip_deconv(*cell, *source, step, "weight"));
                        out.insert(names::skip_deconv(*cell, *source, step, "bias"));
                    }
                }
            }
            PlanOp::Merge { .. } => {}
            PlanOp::ToImage { .. } => {
                out.insert(names::TO_IMAGE_W.into());
                out.insert(names::TO_IMAGE_B.into());
            }
        }
    }
    Ok(out)
}

fn norm_mode(n: NormType) -> NormMode {
    match n {
        NormType::Batch => NormMode::Batch,
        NormType::Instance => NormMode::Instance,
        NormType::None => NormMode::None,
    }
}

fn upsample_step(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    mode: UpsampleType,
    deconv_names: (String, String),
    binding: Binding,
) -> Result<Var> {
    match mode {
        UpsampleType::Bilinear => g.upsample(x, UpsampleMode::Bilinear),
        UpsampleType::Nearest => g.upsample(x, UpsampleMode::Nearest),
        UpsampleType::Deconv => {
            let w = bind(g, store, &deconv_names.0, binding)?;
            let b = bind(g, store, &deconv_names.1, binding)?;
            g.transposed_conv2d(x, w, b)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_block(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    cell: usize,
    block: usize,
    style: ConvType,
    norm: NormType,
    binding: Binding,
) -> Result<Var> {
    let w = bind(g, store, &names::conv(cell, style, block, "weight"), binding)?;
    let b = bind(g, store, &names::conv(cell, style, block, "bias"), binding)?;
    let normalize = |g: &mut Graph, h: Var| -> Result<Var> {
        if norm == NormType::None {
            return Ok(h);
        }
        let gamma = bind(g, store, &names::norm(cell, style, block, norm, "gamma"), binding)?;
        let beta = bind(g, store, &names::norm(cell, style, block, norm, "beta"), binding)?;
        g.normalize(h, norm_mode(norm), gamma, beta, true)
    };
    match style {
        ConvType::PreActivation => {
            let h = normalize(g, x)?;
            let h = g.relu(h);
            g.conv2d(h, w, Some(b), 1, 1)
        }
        ConvType::PostActivation => {
            let h = g.conv2d(x, w, Some(b), 1, 1)?;
            let h = normalize(g, h)?;
            Ok(g.relu(h))
        }
    }
}

/// Interpret a layer plan on `z` (shape `N×z_dim`), reading weights from `store`.
pub(crate) fn plan_forward(g: &mut Graph, store: &ParamStore, plan: &LayerPlan, z: Var, binding: Binding) -> Result<Var> {
    let n = g.value(z).dim(0);
    let mut x: Option<Var> = None;
    let mut cell_outputs: Vec<Var> = Vec::new();
    let mut cell_input_up: Option<Var> = None;
    let mut cell_mode = UpsampleType::Nearest;
    let mut skip_branches: Vec<(usize, Var)> = Vec::new();
    let current = |x: Option<Var>| x.ok_or_else(|| Error::State("layer plan does not start with a latent projection".into()));
    for op in &plan.ops {
        match op {
            PlanOp::LatentProjection { channels, resolution, .. } => {
                let w = bind(g, store, names::PROJ_W, binding)?;
                let b = bind(g, store, names::PROJ_B, binding)?;
                let h = g.linear(z, w, Some(b))?;
                x = Some(g.reshape(h, &[n, *channels, *resolution, *resolution])?);
            }
            PlanOp::Upsample { cell, mode, .. } => {
                let input = current(x)?;
                if *cell > 0 {
                    cell_outputs.push(input);
                }
                cell_mode = *mode;
                skip_branches.clear();
                let up = upsample_step(g, store, input, *mode, (names::deconv(*cell, "weight"), names::deconv(*cell, "bias")), binding)?;
                cell_input_up = Some(up);
                x = Some(up);
            }
            PlanOp::ConvBlock { cell, block, style, norm, .. } => {
                x = Some(conv_block(g, store, current(x)?, *cell, *block, *style, *norm, binding)?);
            }
            PlanOp::SkipIn { cell, source, .. } => {
                let mut h = *cell_outputs
                    .get(*source)
                    .ok_or_else(|| Error::State(format!("skip source cell {source} has no output yet")))?;
                for step in 0..cell - source {
                    let deconv = (names::skip_deconv(*cell, *source, step, "weight"), names::skip_deconv(*cell, *source, step, "bias"));
                    h = upsample_step(g, store, h, cell_mode, deconv, binding)?;
                }
                let w = bind(g, store, &names::skip_conv(*cell, *source, "weight"), binding)?;
                let b = bind(g, store, &names::skip_conv(*cell, *source, "bias"), binding)?;
                skip_branches.push((*source, g.conv2d(h, w, Some(b), 1, 0)?));
            }
            PlanOp::Merge { inputs, .. } => {
                let mut acc = current(x)?;
                for input in inputs {
                    let side = match input {
                        MergeInput::Skip(j) => skip_branches
                            .iter()
                            .find(|(s, _)| s == j)
                            .map(|(_, v)| *v)
                            .ok_or_else(|| Error::State(format!("merge references missing skip branch {j}")))?,
                        MergeInput::Shortcut => cell_input_up.ok_or_else(|| Error::State("shortcut outside a cell".into()))?,
                    };
                    acc = g.add(acc, side)?;
                }
                x = Some(acc);
            }
            PlanOp::ToImage { .. } => {
                let h = g.relu(current(x)?);
                let w = bind(g, store, names::TO_IMAGE_W, binding)?;
                let b = bind(g, store, names::TO_IMAGE_B, binding)?;
                let h = g.conv2d(h, w, Some(b), 1, 0)?;
                x = Some(g.tanh(h));
            }
        }
    }
    current(x)
}

/// Frozen forward of `z` in chunks of [`EVAL_CHUNK`].
fn chunked_forward(store: &ParamStore, plan: &LayerPlan, z: &Tensor) -> Result<Tensor> {
    let n = z.dim(0);
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let mut g = Graph::new();
        let zv = g.input(z.narrow(start, end));
        let out = plan_forward(&mut g, store, plan, zv, Binding::Frozen)?;
        parts.push(g.value(out).clone());
        start = end;
    }
    Tensor::cat_rows(&parts)
}

fn check_genotype(cfg: &NetConfig, cells: usize, genotype: &Genotype) -> Result<()> {
    genotype.ensure_valid()?;
    if genotype.num_cells() != cells {
        return Err(Error::Stage(format!(
            "genotype has {} cells but the generator is at {} cells",
            genotype.num_cells(),
            cells
        )));
    }
    if genotype.base_resolution != cfg.base_resolution || genotype.base_channels != cfg.channels || genotype.z_dim != cfg.z_dim {
        return Err(Error::Input(format!(
            "genotype geometry (base {}, channels {}, z {}) does not match the network (base {}, channels {}, z {})",
            genotype.base_resolution, genotype.base_channels, genotype.z_dim, cfg.base_resolution, cfg.channels, cfg.z_dim
        )));
    }
    Ok(())
}

/// Shared generator weights for every architectural choice of every active cell.
#[derive(Clone, Debug, PartialEq)]
pub struct Supernet {
    config: NetConfig,
    cells: usize,
    params: ParamStore,
}

impl Supernet {
    pub fn build<R: Rng + ?Sized>(config: NetConfig, cells: usize, rng: &mut R) -> Result<Self> {
        if cells == 0 || cells > config.max_cells {
            return Err(Error::Stage(format!("cannot build {cells} cells (max {})", config.max_cells)));
        }
        let mut params = ParamStore::new();
        for spec in generator_specs(&config, cells) {
            let value = spec.sample(rng);
            params.insert(spec.name, value);
        }
        Ok(Supernet { config, cells, params })
    }

    pub fn from_parts(config: NetConfig, cells: usize, params: ParamStore) -> Result<Self> {
        for spec in generator_specs(&config, cells) {
            let p = params.get(&spec.name)?;
            if p.value.shape() != spec.shape.as_slice() {
                return Err(Error::State(format!("parameter `{}` has shape {:?}, expected {:?}", spec.name, p.value.shape(), spec.shape)));
            }
        }
        Ok(Supernet { config, cells, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn num_cells(&self) -> usize {
        self.cells
    }

    /// Stage index: `cells - 1`.
    pub fn stage(&self) -> usize {
        self.cells - 1
    }

    pub fn output_resolution(&self) -> usize {
        self.config.resolution_at(self.cells)
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Fresh values and optimizer state for every current parameter.
    pub fn reinitialize<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut params = ParamStore::new();
        for spec in generator_specs(&self.config, self.cells) {
            let value = spec.sample(rng);
            params.insert(spec.name, value);
        }
        self.params = params;
    }

    pub fn check(&self, genotype: &Genotype) -> Result<()> {
        check_genotype(&self.config, self.cells, genotype)
    }

    fn add_cell<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if self.cells >= self.config.max_cells {
            return Err(Error::Stage(format!("generator already has the maximum of {} cells", self.config.max_cells)));
        }
        for spec in cell_specs(&self.config, self.cells) {
            let value = spec.sample(rng);
            self.params.insert(spec.name, value);
        }
        self.cells += 1;
        Ok(())
    }
}

/// Images for `z` through the genotype's slice of the supernet, in `[-1, 1]`.
pub fn forward_child(supernet: &Supernet, genotype: &Genotype, z: &Tensor) -> Result<Tensor> {
    supernet.check(genotype)?;
    chunked_forward(&supernet.params, &to_layer_plan(genotype)?, z)
}

/// A standalone generator holding only the weights its genotype uses.
#[derive(Clone, Debug, PartialEq)]
pub struct ChildModel {
    pub genotype: Genotype,
    pub config: NetConfig,
    pub params: ParamStore,
}

impl ChildModel {
    /// Freshly initialized standalone generator for `genotype`.
    pub fn fresh<R: Rng + ?Sized>(config: NetConfig, genotype: Genotype, rng: &mut R) -> Result<Self> {
        check_genotype(&config, genotype.num_cells(), &genotype)?;
        let wanted = generator_param_names(&genotype)?;
        let mut params = ParamStore::new();
        for spec in generator_specs(&config, genotype.num_cells()) {
            if wanted.contains(&spec.name) {
                let value = spec.sample(rng);
                params.insert(spec.name, value);
            }
        }
        Ok(ChildModel { genotype, config, params })
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        chunked_forward(&self.params, &to_layer_plan(&self.genotype)?, z)
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }
}

pub fn extract_child(supernet: &Supernet, genotype: &Genotype) -> Result<ChildModel> {
    supernet.check(genotype)?;
    let wanted = generator_param_names(genotype)?;
    let params = supernet.params.subset(wanted.iter().map(String::as_str))?;
    Ok(ChildModel { genotype: genotype.clone(), config: supernet.config.clone(), params })
}

/// Append one freshly initialized generator cell and prepend one
/// discriminator block for the doubled resolution.
pub fn grow<R: Rng + ?Sized>(supernet: &mut Supernet, disc: &mut Discriminator, rng: &mut R) -> Result<()> {
    if disc.stages() != supernet.num_cells() {
        return Err(Error::Stage(format!(
            "discriminator has {} blocks but the generator has {} cells",
            disc.stages(),
            supernet.num_cells()
        )));
    }
    supernet.add_cell(rng)?;
    disc.grow(rng)
}
