use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data_io::{downsample, gen_synthetic_dataset, load_cifar10_bin, LabeledImageSet, SYNTHETIC_RESOLUTIONS};
use crate::error::{Error, Result};
use crate::genotype::Genotype;
use crate::metrics::{compute_reward, train_surrogate, GaussianStats, RewardMetric, RewardReport, SurrogateScorer};
use crate::networks::{forward_child, sample_latent, ChildModel, Supernet};
use crate::tensor::Tensor;

use super::config::{DatasetSource, SearchConfig};

const SCORER_SALT: u64 = 0x5C0_4E5A;
const NOISE_SALT: u64 = 0x0015_EBA4;

/// Scores generators. The search only ever asks through this trait, so tests
/// can substitute a rigged scorer.
pub trait Evaluator: Sync {
    /// Proxy reward of `genotype` on the shared weights.
    fn proxy(&self, supernet: &Supernet, genotype: &Genotype) -> Result<RewardReport>;

    /// Final score of a standalone generator.
    fn score_child(&self, child: &ChildModel) -> Result<RewardReport>;
}

/// Training images per stage resolution plus the held-out evaluation set.
#[derive(Clone, Debug)]
pub struct SearchData {
    pub train: LabeledImageSet,
    pub eval: LabeledImageSet,
    stage_images: Vec<Tensor>,
}

impl SearchData {
    /// Both sets are pooled down to the output resolution of `config`.
    pub fn new(config: &SearchConfig, train: LabeledImageSet, eval: LabeledImageSet) -> Result<Self> {
        let out_res = config.output_resolution();
        for set in [&train, &eval] {
            if set.resolution() < out_res {
                return Err(Error::Config(format!("dataset resolution {} is below the output resolution {out_res}", set.resolution())));
            }
        }
        if train.len() < config.d_batch {
            return Err(Error::Config(format!("{} training images cannot fill a batch of {}", train.len(), config.d_batch)));
        }
        let train = train.downsampled(out_res)?;
        let eval = eval.downsampled(out_res)?;
        let stage_images = (0..config.num_cells)
            .map(|s| downsample(&train.images, config.base_resolution << (s + 1)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SearchData { train, eval, stage_images })
    }

    /// Load or render the configured dataset.
    pub fn load(config: &SearchConfig, seed: u64) -> Result<Self> {
        match &config.dataset {
            DatasetSource::Synthetic => {
                let out_res = config.output_resolution();
                let res = SYNTHETIC_RESOLUTIONS
                    .iter()
                    .copied()
                    .find(|&r| r >= out_res && r % out_res == 0 && (r / out_res).is_power_of_two())
                    .ok_or_else(|| Error::Config(format!("no synthetic resolution pools down to {out_res}")))?;
                let all = gen_synthetic_dataset(config.train_size + config.eval_size, res, config.num_classes, seed)?;
                let (train, eval) = all.split(config.train_size);
                SearchData::new(config, train, eval)
            }
            DatasetSource::Cifar10(dir) => {
                let dir = std::path::Path::new(dir);
                let train = load_cifar10_bin(dir, true)?.split(config.train_size).0;
                let eval = load_cifar10_bin(dir, false)?.split(config.eval_size).0;
                SearchData::new(config, train, eval)
            }
        }
    }

    /// Training images at the resolution of stage `stage`.
    pub fn stage_images(&self, stage: usize) -> Result<&Tensor> {
        self.stage_images.get(stage).ok_or_else(|| Error::Stage(format!("no training images for stage {stage}")))
    }

    pub fn full_resolution_images(&self) -> &Tensor {
        self.stage_images.last().expect("at least one stage")
    }
}

/// Reward computation with the trained surrogate on fixed noise banks.
#[derive(Clone, Debug)]
pub struct SurrogateEvaluator {
    scorer: SurrogateScorer,
    metric: RewardMetric,
    proxy_noise: Tensor,
    final_noise: Tensor,
    min_eval_samples: usize,
    references: BTreeMap<usize, GaussianStats>,
}

impl SurrogateEvaluator {
    /// `noise_seed` fixes both latent banks, so rewards are a function of the
    /// weights and the genotype alone.
    pub fn new(scorer: SurrogateScorer, config: &SearchConfig, data: &SearchData, noise_seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let proxy_noise = sample_latent(config.min_eval_samples, config.z_dim, &mut rng);
        let final_noise = sample_latent(config.final_eval_samples, config.z_dim, &mut rng);
        let mut references = BTreeMap::new();
        for s in 0..config.num_cells {
            let res = config.base_resolution << (s + 1);
            let (_, features) = scorer.evaluate(&downsample(&data.eval.images, res)?)?;
            references.insert(res, GaussianStats::from_features(&features)?);
        }
        Ok(SurrogateEvaluator {
            scorer,
            metric: config.metric,
            proxy_noise,
            final_noise,
            min_eval_samples: config.min_eval_samples,
            references,
        })
    }

    /// Train the surrogate on the search data and build the evaluator.
    pub fn train(config: &SearchConfig, data: &SearchData, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SCORER_SALT);
        let scorer = train_surrogate(&data.train, &config.scorer_config(), &mut rng)?;
        SurrogateEvaluator::from_scorer(scorer, config, data, seed)
    }

    /// Evaluator around an already trained scorer, with the noise banks
    /// [`SurrogateEvaluator::train`] would draw for `seed`.
    pub fn from_scorer(scorer: SurrogateScorer, config: &SearchConfig, data: &SearchData, seed: u64) -> Result<Self> {
        SurrogateEvaluator::new(scorer, config, data, seed ^ NOISE_SALT)
    }

    pub fn scorer(&self) -> &SurrogateScorer {
        &self.scorer
    }

    pub fn score_images(&self, images: &Tensor, min_samples: usize) -> Result<RewardReport> {
        compute_reward(images, &self.scorer, self.metric, self.references.get(&images.dim(2)), min_samples)
    }
}

impl Evaluator for SurrogateEvaluator {
    fn proxy(&self, supernet: &Supernet, genotype: &Genotype) -> Result<RewardReport> {
        let images = forward_child(supernet, genotype, &self.proxy_noise)?;
        self.score_images(&images, self.min_eval_samples)
    }

    fn score_child(&self, child: &ChildModel) -> Result<RewardReport> {
        let images = child.forward(&self.final_noise)?;
        self.score_images(&images, self.final_noise.dim(0))
    }
}
