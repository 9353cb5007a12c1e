use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genotype::{random_genotype, Genotype};
use crate::metrics::{spearman_rank_correlation, RewardReport};
use crate::networks::{child_train_step, gan_train_step, ChildModel, Discriminator, StepLosses, Supernet};

use super::beam::{genotype_tokens, top_k_indices};
use super::config::SearchConfig;
use super::engine::{sample_genotype_from, SearchState};
use super::evaluate::{Evaluator, SearchData};

/// Train `genotype` from scratch as a standalone generator against a fresh
/// discriminator for `steps` generator iterations.
pub fn retrain_child(
    genotype: &Genotype,
    config: &SearchConfig,
    data: &SearchData,
    steps: usize,
    seed: u64,
) -> Result<(ChildModel, Option<StepLosses>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = config.net_config();
    let mut child = ChildModel::fresh(net.clone(), genotype.clone(), &mut rng)?;
    let mut disc = Discriminator::build(net, genotype.num_cells(), &mut rng)?;
    let images = data.full_resolution_images();
    let n = images.dim(0);
    let mut last = None;
    for _ in 0..steps {
        let idx = rand::seq::index::sample(&mut rng, n, config.d_batch).into_vec();
        last = Some(child_train_step(&mut child, &mut disc, &images.select_rows(&idx), &mut rng, &config.step_options())?);
    }
    Ok((child, last))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrainEntry {
    pub candidate_index: usize,
    pub genotype: Genotype,
    pub tokens: String,
    pub proxy_reward: Option<f64>,
    pub seed: u64,
    pub report: RewardReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeriveReport {
    /// Proxy reward of every sampled candidate, in sample order.
    pub candidate_rewards: Vec<f64>,
    pub candidate_tokens: Vec<String>,
    /// The retrained top K, in proxy-rank order.
    pub retrained: Vec<RetrainEntry>,
    /// Index into `retrained` of the highest final IS.
    pub best: usize,
}

impl DeriveReport {
    pub fn best_entry(&self) -> &RetrainEntry {
        &self.retrained[self.best]
    }
}

/// Retrain each `(index, genotype, proxy, seed)` in parallel; results come
/// back in input order.
fn retrain_all(
    jobs: Vec<(usize, Genotype, Option<f64>, u64)>,
    config: &SearchConfig,
    data: &SearchData,
    evaluator: &dyn Evaluator,
    steps: usize,
) -> Result<Vec<RetrainEntry>> {
    jobs.into_par_iter()
        .map(|(candidate_index, genotype, proxy_reward, seed)| {
            let (child, _) = retrain_child(&genotype, config, data, steps, seed)?;
            let report = evaluator.score_child(&child)?;
            Ok(RetrainEntry { candidate_index, tokens: genotype_tokens(&genotype), genotype, proxy_reward, seed, report })
        })
        .collect()
}

fn argmax_is(entries: &[RetrainEntry]) -> usize {
    let mut best = 0;
    for (i, e) in entries.iter().enumerate() {
        if e.report.is_mean > entries[best].report.is_mean {
            best = i;
        }
    }
    best
}

/// Sample M full genotypes from the final-stage policy, rank them by proxy
/// reward, retrain the top K from scratch and return the best by IS.
pub fn derive_final<R: Rng + ?Sized>(
    state: &SearchState,
    data: &SearchData,
    evaluator: &dyn Evaluator,
    rng: &mut R,
) -> Result<(Genotype, DeriveReport)> {
    let cfg = &state.config;
    if !state.is_finished() || state.stage + 1 != cfg.num_cells {
        return Err(Error::State(format!("derivation needs a finished search (iteration {} of {})", state.iter, cfg.total_iters)));
    }
    let parents = if state.stage == 0 { None } else { state.beam.stage(state.stage - 1) };
    let mut genotypes = Vec::with_capacity(cfg.num_candidates);
    for _ in 0..cfg.num_candidates {
        genotypes.push(sample_genotype_from(&state.controller, parents, cfg, rng)?.0);
    }
    let seeds: Vec<u64> = (0..cfg.top_k).map(|_| rng.random()).collect();
    let rewards = genotypes
        .par_iter()
        .map(|g| evaluator.proxy(&state.supernet, g).map(|r| r.reward))
        .collect::<Result<Vec<f64>>>()?;
    let jobs = top_k_indices(&rewards, cfg.top_k)?
        .into_iter()
        .zip(seeds)
        .map(|(i, seed)| (i, genotypes[i].clone(), Some(rewards[i]), seed))
        .collect();
    let retrained = retrain_all(jobs, cfg, data, evaluator, cfg.retrain_generator_steps)?;
    let best = argmax_is(&retrained);
    let report = DeriveReport {
        candidate_rewards: rewards,
        candidate_tokens: genotypes.iter().map(genotype_tokens).collect(),
        retrained,
        best,
    };
    Ok((report.best_entry().genotype.clone(), report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMode {
    /// One supernet trained on uniformly random genotypes; candidates ranked
    /// by proxy reward.
    SharedWeights,
    /// Each candidate trained briefly from scratch and ranked by its own IS.
    EarlyStop,
}

impl std::str::FromStr for BaselineMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" | "shared_weights" => Ok(BaselineMode::SharedWeights),
            "earlystop" | "early_stop" => Ok(BaselineMode::EarlyStop),
            other => Err(Error::Config(format!("unknown baseline mode `{other}` (expected shared or earlystop)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub candidates: usize,
    /// Shared steps in shared mode, per-candidate generator steps in
    /// early-stop mode.
    pub train_steps: usize,
    pub wall_clock: Option<Duration>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub index: usize,
    pub genotype: Genotype,
    pub tokens: String,
    pub score: f64,
    pub report: RewardReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub mode: BaselineMode,
    pub rows: Vec<BaselineRow>,
    pub best: usize,
}

impl BaselineReport {
    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    pub fn median_score(&self) -> f64 {
        let mut s = self.scores();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        }
    }
}

fn random_full_genotype<R: Rng + ?Sized>(cfg: &SearchConfig, rng: &mut R) -> Genotype {
    random_genotype(cfg.num_cells, cfg.base_resolution, cfg.channels, cfg.z_dim, rng)
}

/// Random search over full genotypes under `budget`.
pub fn random_search_baseline<R: Rng + ?Sized>(
    mode: BaselineMode,
    budget: &Budget,
    config: &SearchConfig,
    data: &SearchData,
    evaluator: &dyn Evaluator,
    rng: &mut R,
) -> Result<(Genotype, BaselineReport)> {
    if budget.candidates == 0 || budget.wall_clock.is_some_and(|d| d.is_zero()) {
        return Err(Error::Config("random search budget must be positive".into()));
    }
    let start = Instant::now();
    let out_of_time = |done: usize| done > 0 && budget.wall_clock.is_some_and(|d| start.elapsed() >= d);
    let mut rows = Vec::new();
    match mode {
        BaselineMode::EarlyStop => {
            if budget.wall_clock.is_none() {
                let jobs = (0..budget.candidates).map(|i| (i, random_full_genotype(config, rng), None, rng.random())).collect();
                for e in retrain_all(jobs, config, data, evaluator, budget.train_steps)? {
                    rows.push(BaselineRow { index: e.candidate_index, genotype: e.genotype, tokens: e.tokens, score: e.report.is_mean, report: e.report });
                }
            } else {
                for i in 0..budget.candidates {
                    if out_of_time(i) {
                        break;
                    }
                    let genotype = random_full_genotype(config, rng);
                    let (child, _) = retrain_child(&genotype, config, data, budget.train_steps, rng.random())?;
                    let report = evaluator.score_child(&child)?;
                    rows.push(BaselineRow { index: i, tokens: genotype_tokens(&genotype), genotype, score: report.is_mean, report });
                }
            }
        }
        BaselineMode::SharedWeights => {
            let net = config.net_config();
            let mut supernet = Supernet::build(net.clone(), config.num_cells, rng)?;
            let mut disc = Discriminator::build(net, config.num_cells, rng)?;
            let images = data.full_resolution_images();
            for step in 0..budget.train_steps {
                if out_of_time(step) {
                    break;
                }
                let genotype = random_full_genotype(config, rng);
                let idx = rand::seq::index::sample(rng, images.dim(0), config.d_batch).into_vec();
                gan_train_step(&mut supernet, &mut disc, &genotype, &images.select_rows(&idx), rng, &config.step_options())?;
            }
            for i in 0..budget.candidates {
                if out_of_time(i) {
                    break;
                }
                let genotype = random_full_genotype(config, rng);
                let report = evaluator.proxy(&supernet, &genotype)?;
                rows.push(BaselineRow { index: i, tokens: genotype_tokens(&genotype), genotype, score: report.reward, report });
            }
        }
    }
    let best = top_k_indices(&rows.iter().map(|r| r.score).collect::<Vec<_>>(), 1)?[0];
    Ok((rows[best].genotype.clone(), BaselineReport { mode, rows, best }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub tokens: String,
    pub proxy: f64,
    pub real: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub spearman: f64,
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    /// Correlate already measured (proxy, real) pairs.
    pub fn from_rows(rows: Vec<StudyRow>) -> Result<Self> {
        if rows.len() < 5 {
            return Err(Error::Input(format!("the study needs at least 5 genotypes, got {}", rows.len())));
        }
        let proxy: Vec<f64> = rows.iter().map(|r| r.proxy).collect();
        let real: Vec<f64> = rows.iter().map(|r| r.real).collect();
        Ok(StudyReport { spearman: spearman_rank_correlation(&proxy, &real)?, rows })
    }
}

/// Rank correlation between each genotype's proxy reward on `supernet` and
/// its IS after retraining from scratch.
pub fn proxy_vs_real_study(
    genotypes: &[Genotype],
    supernet: &Supernet,
    config: &SearchConfig,
    data: &SearchData,
    evaluator: &dyn Evaluator,
    seed: u64,
) -> Result<StudyReport> {
    if genotypes.len() < 5 {
        return Err(Error::Input(format!("the study needs at least 5 genotypes, got {}", genotypes.len())));
    }
    let proxy = genotypes
        .par_iter()
        .map(|g| evaluator.proxy(supernet, g).map(|r| r.reward))
        .collect::<Result<Vec<f64>>>()?;
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let jobs = genotypes.iter().enumerate().map(|(i, g)| (i, g.clone(), Some(proxy[i]), seeder.random())).collect();
    let real = retrain_all(jobs, config, data, evaluator, config.retrain_generator_steps)?;
    StudyReport::from_rows(
        real.into_iter()
            .zip(proxy)
            .map(|(e, proxy)| StudyRow { tokens: e.tokens, proxy, real: e.report.is_mean })
            .collect(),
    )
}
