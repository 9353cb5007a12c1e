use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{seed_from_beam, Controller, SampleTrace};
use crate::data_io::{Checkpoint, RngState};
use crate::error::{Error, Result};
use crate::genotype::{decode, Genotype};
use crate::networks::{gan_train_step, grow, Discriminator, GanStepOptions, StepLosses, Supernet};
use crate::rl::{reinforce_update, BaselineState, ReinforceReport};
use crate::tensor::Tensor;

use super::beam::{select_top_k, BeamArchive, BeamEntry, Candidate};
use super::config::SearchConfig;
use super::evaluate::{Evaluator, SearchData};
use super::events::Event;
use super::window::{dynamic_reset_check, LossWindow};

/// Latent seed used for every step once the collapse rig engages.
const COLLAPSE_NOISE_SEED: u64 = 0xC011_A95E;

/// Minibatch pinned by the collapse rig.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseFreeze {
    pub genotype: Genotype,
    pub batch: Vec<usize>,
}

/// Everything the search loop carries between iterations.
#[derive(Clone, Debug)]
pub struct SearchState {
    pub config: SearchConfig,
    /// Next iteration to run.
    pub iter: usize,
    pub stage: usize,
    pub supernet: Supernet,
    pub disc: Discriminator,
    pub controller: Controller,
    pub baseline: BaselineState,
    pub window_g: LossWindow,
    pub window_d: LossWindow,
    pub beam: BeamArchive,
    /// Shared steps since the networks were last built, grown or reset.
    pub steps_since_restart: usize,
    pub total_shared_steps: usize,
    pub collapse: Option<CollapseFreeze>,
    pub events: Vec<Event>,
    pub rng: ChaCha8Rng,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedStepLog {
    pub iter: usize,
    pub stage: usize,
    pub step: usize,
    pub d_loss: f32,
    pub g_loss: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerStepLog {
    pub iter: usize,
    pub stage: usize,
    pub step: usize,
    pub tokens: Vec<usize>,
    pub is_mean: f64,
    pub fid: Option<f64>,
    #[serde(flatten)]
    pub update: ReinforceReport,
}

/// Hooks for logging and checkpointing; every method defaults to a no-op.
pub trait SearchObserver {
    fn shared_step(&mut self, _log: &SharedStepLog) -> Result<()> {
        Ok(())
    }

    fn controller_step(&mut self, _log: &ControllerStepLog) -> Result<()> {
        Ok(())
    }

    fn event(&mut self, _event: &Event) -> Result<()> {
        Ok(())
    }

    fn iteration_done(&mut self, _state: &SearchState) -> Result<()> {
        Ok(())
    }
}

/// Observer that ignores everything.
pub struct NoObserver;

impl SearchObserver for NoObserver {}

impl SearchState {
    pub fn new(config: SearchConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let net = config.net_config();
        let supernet = Supernet::build(net.clone(), 1, &mut rng)?;
        let disc = Discriminator::build(net, 1, &mut rng)?;
        let controller = Controller::new(0, config.hidden_size, &mut rng)?;
        Ok(SearchState {
            iter: 0,
            stage: 0,
            supernet,
            disc,
            controller,
            baseline: BaselineState::new(config.baseline_decay),
            window_g: LossWindow::new(config.window_len),
            window_d: LossWindow::new(config.window_len),
            beam: BeamArchive::default(),
            steps_since_restart: 0,
            total_shared_steps: 0,
            collapse: None,
            events: Vec::new(),
            rng,
            config,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.iter >= self.config.total_iters
    }

    fn emit(&mut self, event: Event, observer: &mut dyn SearchObserver) -> Result<()> {
        observer.event(&event)?;
        self.events.push(event);
        Ok(())
    }

    /// Draw a genotype for the current stage from the live policy.
    pub fn sample_genotype(&mut self) -> Result<(Genotype, SampleTrace)> {
        let parents = if self.stage == 0 { None } else { Some(self.beam.stage(self.stage - 1).unwrap_or(&[])) };
        sample_genotype_from(&self.controller, parents, &self.config, &mut self.rng)
    }

    fn restart_networks(&mut self) {
        self.window_g.clear();
        self.window_d.clear();
        self.steps_since_restart = 0;
        self.collapse = None;
    }

    /// Reinitialize G and D in place. The controller is left untouched.
    pub fn reset_networks(&mut self) -> Result<()> {
        self.supernet.reinitialize(&mut self.rng);
        self.disc.reinitialize(&mut self.rng)?;
        self.restart_networks();
        Ok(())
    }
}

/// A uniformly chosen parent beam (if any) extended by one cell sampled from
/// `controller`, seeded with the parent's final hidden state.
pub fn sample_genotype_from<R: Rng + ?Sized>(
    controller: &Controller,
    parents: Option<&[BeamEntry]>,
    cfg: &SearchConfig,
    rng: &mut R,
) -> Result<(Genotype, SampleTrace)> {
    let (prefix, seed) = match parents {
        None => (Genotype::new(Vec::new(), cfg.base_resolution, cfg.channels, cfg.z_dim), None),
        Some([]) => return Err(Error::State(format!("stage {} has no beam to seed from", controller.stage()))),
        Some(parents) => {
            let parent = &parents[rng.random_range(0..parents.len())];
            (parent.genotype.clone(), Some(seed_from_beam(&parent.trace)?))
        }
    };
    let trace = controller.sample(seed.as_deref(), rng)?;
    let mut genotype = prefix;
    genotype.cells.push(decode(&trace.tokens, controller.stage())?);
    Ok((genotype, trace))
}

/// Shared-GAN phase. Returns the step count, whether the reset check fired
/// and the mean losses.
pub fn shared_gan_phase(
    state: &mut SearchState,
    data: &SearchData,
    observer: &mut dyn SearchObserver,
) -> Result<(usize, bool, f64, f64)> {
    let cfg = state.config.clone();
    let images = data.stage_images(state.stage)?;
    let n = images.dim(0);
    let steps_per_epoch = n / cfg.d_batch;
    let mut steps = 0;
    let (mut sum_g, mut sum_d) = (0.0f64, 0.0f64);
    let mut fired = false;
    'epochs: for _ in 0..cfg.shared_epochs_per_iter {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut state.rng);
        for b in 0..steps_per_epoch {
            let collapsed = cfg.collapse_after_steps > 0 && state.steps_since_restart >= cfg.collapse_after_steps;
            let losses = if collapsed {
                if state.collapse.is_none() {
                    let (genotype, _) = state.sample_genotype()?;
                    state.collapse = Some(CollapseFreeze { genotype, batch: order[..cfg.d_batch].to_vec() });
                }
                let freeze = state.collapse.clone().expect("set above");
                let opts = GanStepOptions { g_lr: 0.0, d_lr: 0.0, ..cfg.step_options() };
                let mut noise = ChaCha8Rng::seed_from_u64(COLLAPSE_NOISE_SEED);
                let real = images.select_rows(&freeze.batch);
                gan_train_step(&mut state.supernet, &mut state.disc, &freeze.genotype, &real, &mut noise, &opts)?
            } else {
                let (genotype, _) = state.sample_genotype()?;
                let real = images.select_rows(&order[b * cfg.d_batch..(b + 1) * cfg.d_batch]);
                gan_train_step(&mut state.supernet, &mut state.disc, &genotype, &real, &mut state.rng, &cfg.step_options())?
            };
            let StepLosses { d_loss, g_loss } = losses;
            state.window_g.push(g_loss);
            state.window_d.push(d_loss);
            state.steps_since_restart += 1;
            state.total_shared_steps += 1;
            sum_g += f64::from(g_loss);
            sum_d += f64::from(d_loss);
            observer.shared_step(&SharedStepLog { iter: state.iter, stage: state.stage, step: steps, d_loss, g_loss })?;
            steps += 1;
            if cfg.reset_enabled && dynamic_reset_check(&state.window_g, &state.window_d, cfg.reset_threshold) {
                fired = true;
                break 'epochs;
            }
        }
    }
    let denom = steps.max(1) as f64;
    Ok((steps, fired, sum_g / denom, sum_d / denom))
}

/// Controller phase on frozen shared weights.
pub fn controller_phase(
    state: &mut SearchState,
    evaluator: &dyn Evaluator,
    observer: &mut dyn SearchObserver,
) -> Result<Vec<ReinforceReport>> {
    let cfg = state.config.clone();
    let mut reports = Vec::with_capacity(cfg.ctrl_steps_per_iter);
    for step in 0..cfg.ctrl_steps_per_iter {
        let (genotype, trace) = state.sample_genotype()?;
        let reward = evaluator.proxy(&state.supernet, &genotype)?;
        let update = reinforce_update(
            &mut state.controller,
            &trace,
            reward.reward as f32,
            &mut state.baseline,
            cfg.entropy_weight,
            cfg.ctrl_lr,
        )?;
        observer.controller_step(&ControllerStepLog {
            iter: state.iter,
            stage: state.stage,
            step,
            tokens: trace.tokens.clone(),
            is_mean: reward.is_mean,
            fid: reward.fid,
            update,
        })?;
        reports.push(update);
    }
    Ok(reports)
}

/// Sample `num_candidates` genotypes, score them on the shared weights and
/// keep the top K as the beam of the current stage.
pub fn save_top_k(state: &mut SearchState, evaluator: &dyn Evaluator) -> Result<Vec<f64>> {
    if state.beam.stages.len() != state.stage {
        return Err(Error::State(format!("beam already holds {} stages at stage {}", state.beam.stages.len(), state.stage)));
    }
    let mut candidates = Vec::with_capacity(state.config.num_candidates);
    for _ in 0..state.config.num_candidates {
        let (genotype, trace) = state.sample_genotype()?;
        let reward = evaluator.proxy(&state.supernet, &genotype)?.reward;
        candidates.push(Candidate { genotype, trace, reward });
    }
    let entries = select_top_k(&candidates, state.config.top_k)?;
    let rewards = entries.iter().map(|e| e.reward).collect();
    state.beam.stages.push(entries);
    Ok(rewards)
}

/// Run one iteration of the search loop.
pub fn run_iteration(
    state: &mut SearchState,
    data: &SearchData,
    evaluator: &dyn Evaluator,
    observer: &mut dyn SearchObserver,
) -> Result<()> {
    if state.is_finished() {
        return Err(Error::State("search already finished".into()));
    }
    let it = state.iter;
    let (steps, reset_flag, mean_g, mean_d) = shared_gan_phase(state, data, observer)?;
    let stage = state.stage;
    state.emit(
        Event::TrainShared { iter: it, stage, steps, reset_flag, mean_g_loss: mean_g, mean_d_loss: mean_d },
        observer,
    )?;

    let reports = controller_phase(state, evaluator, observer)?;
    let mean_reward = reports.iter().map(|r| f64::from(r.reward)).sum::<f64>() / reports.len().max(1) as f64;
    let baseline = f64::from(state.baseline.value);
    state.emit(Event::TrainController { iter: it, stage, steps: reports.len(), mean_reward, baseline }, observer)?;

    if it > 0 && it % state.config.u_stage == 0 {
        let rewards = save_top_k(state, evaluator)?;
        state.emit(Event::SaveTopK { iter: it, stage, rewards }, observer)?;
        grow(&mut state.supernet, &mut state.disc, &mut state.rng)?;
        state.stage += 1;
        state.restart_networks();
        state.emit(Event::Grow { iter: it, stage: state.stage }, observer)?;
        state.controller = Controller::new(state.stage, state.config.hidden_size, &mut state.rng)?;
        state.baseline = BaselineState::new(state.config.baseline_decay);
        state.emit(Event::NewController { iter: it, stage: state.stage }, observer)?;
    }
    if reset_flag {
        state.reset_networks()?;
        state.emit(Event::Reset { iter: it, stage: state.stage }, observer)?;
    }
    state.iter += 1;
    if state.is_finished() {
        let rewards = save_top_k(state, evaluator)?;
        state.emit(Event::SaveTopK { iter: it, stage: state.stage, rewards }, observer)?;
    }
    observer.iteration_done(state)
}

/// Run the remaining iterations, at most `max_iters` of them if given.
pub fn run_iterations(
    state: &mut SearchState,
    data: &SearchData,
    evaluator: &dyn Evaluator,
    observer: &mut dyn SearchObserver,
    max_iters: Option<usize>,
) -> Result<()> {
    let mut done = 0;
    while !state.is_finished() && max_iters.is_none_or(|m| done < m) {
        run_iteration(state, data, evaluator, observer)?;
        done += 1;
    }
    Ok(())
}

/// The whole search from a fresh state.
pub fn run_search(
    config: &SearchConfig,
    data: &SearchData,
    evaluator: &dyn Evaluator,
    rng: ChaCha8Rng,
    observer: &mut dyn SearchObserver,
) -> Result<SearchState> {
    let mut state = SearchState::new(config.clone(), rng)?;
    run_iterations(&mut state, data, evaluator, observer, None)?;
    Ok(state)
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::State(e.to_string()))
}

fn from_json<T: serde::de::DeserializeOwned>(ckpt: &Checkpoint, key: &str) -> Result<T> {
    serde_json::from_str(ckpt.meta(key)?).map_err(|e| Error::Corruption(format!("metadata `{key}`: {e}")))
}

impl SearchState {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new(self.config.hash());
        ck.put_store("gen/", self.supernet.params());
        ck.put_store("disc/", self.disc.params());
        ck.put_store("ctrl/", self.controller.params());
        for (name, u) in self.disc.u_vectors() {
            ck.tensors.insert(format!("disc_u/{name}"), Tensor::new(vec![u.len()], u.clone())?);
        }
        for (name, w) in [("window_g", &self.window_g), ("window_d", &self.window_d)] {
            let v = w.values();
            ck.tensors.insert(name.to_string(), Tensor::new(vec![v.len()], v)?);
        }
        ck.rngs.insert("main".into(), RngState::capture(&self.rng));
        let meta = [
            ("iter", self.iter.to_string()),
            ("stage", self.stage.to_string()),
            ("gen_cells", self.supernet.num_cells().to_string()),
            ("disc_stages", self.disc.stages().to_string()),
            ("ctrl_stage", self.controller.stage().to_string()),
            ("ctrl_hidden", self.controller.hidden_size().to_string()),
            ("baseline_value", self.baseline.value.to_bits().to_string()),
            ("baseline_decay", self.baseline.decay.to_bits().to_string()),
            ("baseline_initialized", self.baseline.initialized.to_string()),
            ("steps_since_restart", self.steps_since_restart.to_string()),
            ("total_shared_steps", self.total_shared_steps.to_string()),
            ("beam", json(&self.beam)?),
            ("collapse", json(&self.collapse)?),
            ("events", json(&self.events)?),
        ];
        for (k, v) in meta {
            ck.meta.insert(k.to_string(), v);
        }
        Ok(ck)
    }

    /// Rebuild a state saved by [`SearchState::to_checkpoint`]. The config must
    /// hash to the value recorded in the checkpoint.
    pub fn from_checkpoint(config: SearchConfig, ck: &Checkpoint) -> Result<Self> {
        if ck.config_hash != config.hash() {
            return Err(Error::Corruption(format!("checkpoint config hash {} does not match {}", ck.config_hash, config.hash())));
        }
        let net = config.net_config();
        let supernet = Supernet::from_parts(net.clone(), ck.meta_parse("gen_cells")?, ck.take_store("gen/")?)?;
        let mut u = std::collections::BTreeMap::new();
        for (key, t) in ck.tensors.range("disc_u/".to_string()..) {
            let Some(name) = key.strip_prefix("disc_u/") else { break };
            u.insert(name.to_string(), t.data().to_vec());
        }
        let disc = Discriminator::from_parts(net, ck.meta_parse("disc_stages")?, ck.take_store("disc/")?, u)?;
        let controller = Controller::from_parts(ck.meta_parse("ctrl_stage")?, ck.meta_parse("ctrl_hidden")?, ck.take_store("ctrl/")?)?;
        let baseline = BaselineState {
            value: f32::from_bits(ck.meta_parse("baseline_value")?),
            decay: f32::from_bits(ck.meta_parse("baseline_decay")?),
            initialized: ck.meta_parse("baseline_initialized")?,
        };
        let rng = ck.rngs.get("main").ok_or_else(|| Error::Corruption("missing rng `main`".into()))?.restore();
        Ok(SearchState {
            iter: ck.meta_parse("iter")?,
            stage: ck.meta_parse("stage")?,
            supernet,
            disc,
            controller,
            baseline,
            window_g: LossWindow::from_values(config.window_len, ck.tensor("window_g")?.data()),
            window_d: LossWindow::from_values(config.window_len, ck.tensor("window_d")?.data()),
            beam: from_json(ck, "beam")?,
            steps_since_restart: ck.meta_parse("steps_since_restart")?,
            total_shared_steps: ck.meta_parse("total_shared_steps")?,
            collapse: from_json(ck, "collapse")?,
            events: from_json(ck, "events")?,
            rng,
            config,
        })
    }
}
