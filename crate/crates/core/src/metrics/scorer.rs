use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::{downsample, LabeledImageSet};
use crate::error::{Error, Result};
use crate::networks::{bind, Binding};
use crate::tensor::{adam_step, kernels, AdamConfig, Graph, ParamStore, Tensor, UpsampleMode, Var};

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub width: usize,
    pub features: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub holdout_fraction: f64,
    pub required_accuracy: f64,
    /// Lowest resolution used when training on pooled-then-upsampled copies.
    pub min_aug_resolution: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            width: 16,
            features: 64,
            epochs: 10,
            batch: 32,
            lr: 2e-3,
            holdout_fraction: 0.2,
            required_accuracy: 0.9,
            min_aug_resolution: 8,
        }
    }
}

/// Small frozen CNN classifier standing in for Inception: class
/// probabilities for IS and penultimate features for FID.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateScorer {
    resolution: usize,
    num_classes: usize,
    features: usize,
    params: ParamStore,
    heldout_accuracy: f64,
}

fn init<R: Rng + ?Sized>(params: &mut ParamStore, name: &str, shape: &[usize], fan_in: usize, rng: &mut R) {
    params.insert(format!("scorer.{name}.weight"), Tensor::randn(shape, (2.0 / fan_in as f32).sqrt(), rng));
    params.insert(format!("scorer.{name}.bias"), Tensor::zeros(&[shape[0]]));
}

struct Outputs {
    features: Var,
    log_probs: Var,
}

impl SurrogateScorer {
    fn build<R: Rng + ?Sized>(resolution: usize, num_classes: usize, cfg: &ScorerConfig, rng: &mut R) -> Self {
        let w = cfg.width;
        let mut params = ParamStore::new();
        init(&mut params, "conv1", &[w, 3, 3, 3], 27, rng);
        init(&mut params, "conv2", &[2 * w, w, 3, 3], 9 * w, rng);
        init(&mut params, "conv3", &[2 * w, 2 * w, 3, 3], 18 * w, rng);
        init(&mut params, "fc", &[cfg.features, 2 * w], 2 * w, rng);
        init(&mut params, "head", &[num_classes, cfg.features], cfg.features, rng);
        SurrogateScorer { resolution, num_classes, features: cfg.features, params, heldout_accuracy: 0.0 }
    }

    pub fn from_parts(resolution: usize, num_classes: usize, features: usize, params: ParamStore, heldout_accuracy: f64) -> Self {
        SurrogateScorer { resolution, num_classes, features, params, heldout_accuracy }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn heldout_accuracy(&self) -> f64 {
        self.heldout_accuracy
    }

    /// Resize to the scorer's resolution: bilinear ×2 steps up, pooling down.
    pub fn prepare(&self, images: &Tensor) -> Result<Tensor> {
        if images.shape().len() != 4 || images.dim(1) != 3 || images.dim(2) != images.dim(3) {
            return Err(Error::Input(format!("scorer expects N×3×R×R images, got {:?}", images.shape())));
        }
        let mut x = images.clone();
        while x.dim(2) < self.resolution {
            x = kernels::upsample(&x, UpsampleMode::Bilinear)?;
        }
        if x.dim(2) > self.resolution {
            x = downsample(&x, self.resolution)?;
        }
        if x.dim(2) != self.resolution {
            return Err(Error::Input(format!("cannot resize {}×{} images to {}", images.dim(2), images.dim(3), self.resolution)));
        }
        Ok(x)
    }

    fn forward(&self, g: &mut Graph, x: Var, binding: Binding) -> Result<Outputs> {
        let p = |g: &mut Graph, layer: &str| -> Result<(Var, Var)> {
            Ok((bind(g, &self.params, &format!("scorer.{layer}.weight"), binding)?, bind(g, &self.params, &format!("scorer.{layer}.bias"), binding)?))
        };
        let (w, b) = p(g, "conv1")?;
        let h = g.conv2d(x, w, Some(b), 1, 1)?;
        let h = g.relu(h);
        let h = g.avg_pool2(h)?;
        let (w, b) = p(g, "conv2")?;
        let h = g.conv2d(h, w, Some(b), 1, 1)?;
        let h = g.relu(h);
        let h = g.avg_pool2(h)?;
        let (w, b) = p(g, "conv3")?;
        let h = g.conv2d(h, w, Some(b), 1, 1)?;
        let h = g.relu(h);
        let area = (g.value(h).dim(2) * g.value(h).dim(3)) as f32;
        let h = g.sum_spatial(h)?;
        let h = g.scale(h, 1.0 / area);
        let (w, b) = p(g, "fc")?;
        let f = g.linear(h, w, Some(b))?;
        let features = g.relu(f);
        let (w, b) = p(g, "head")?;
        let logits = g.linear(features, w, Some(b))?;
        let log_probs = g.log_softmax(logits)?;
        Ok(Outputs { features, log_probs })
    }

    /// Class probabilities `N×C` and features `N×F`. Never mutates the scorer.
    pub fn evaluate(&self, images: &Tensor) -> Result<(Tensor, Tensor)> {
        let x = self.prepare(images)?;
        let n = x.dim(0);
        let mut probs = Vec::with_capacity(n * self.num_classes);
        let mut feats = Vec::with_capacity(n * self.features);
        let mut start = 0;
        while start < n {
            let end = (start + EVAL_CHUNK).min(n);
            let mut g = Graph::new();
            let xv = g.input(x.narrow(start, end));
            let out = self.forward(&mut g, xv, Binding::Frozen)?;
            probs.extend(g.value(out.log_probs).data().iter().map(|l| l.exp()));
            feats.extend_from_slice(g.value(out.features).data());
            start = end;
        }
        Ok((Tensor::new(vec![n, self.num_classes], probs)?, Tensor::new(vec![n, self.features], feats)?))
    }

    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        let (probs, _) = self.evaluate(images)?;
        Ok(probs
            .data()
            .chunks_exact(self.num_classes)
            .map(|row| row.iter().enumerate().fold(0, |best, (i, &p)| if p > row[best] { i } else { best }))
            .collect())
    }

    pub fn accuracy(&self, set: &LabeledImageSet) -> Result<f64> {
        let pred = self.predict(&set.images)?;
        Ok(pred.iter().zip(&set.labels).filter(|(a, b)| a == b).count() as f64 / set.len().max(1) as f64)
    }
}

/// Pool by a random power of two (down to `min_res`) and upsample back, so
/// the scorer also recognizes the blurrier early-stage generator outputs.
fn augment<R: Rng + ?Sized>(x: Tensor, min_res: usize, rng: &mut R) -> Result<Tensor> {
    let res = x.dim(2);
    let mut levels = Vec::new();
    let mut r = res / 2;
    while r >= min_res.max(1) {
        levels.push(r);
        r /= 2;
    }
    if levels.is_empty() || rng.random_bool(0.5) {
        return Ok(x);
    }
    let target = levels[rng.random_range(0..levels.len())];
    let mut y = downsample(&x, target)?;
    while y.dim(2) < res {
        y = kernels::upsample(&y, UpsampleMode::Bilinear)?;
    }
    Ok(y)
}

/// Train the scorer on the leading part of `dataset`, check held-out
/// accuracy on the rest and freeze it.
pub fn train_surrogate<R: Rng + ?Sized>(dataset: &LabeledImageSet, cfg: &ScorerConfig, rng: &mut R) -> Result<SurrogateScorer> {
    if dataset.num_classes < 2 {
        return Err(Error::Input("surrogate scorer needs at least two classes".into()));
    }
    let n_hold = ((dataset.len() as f64) * cfg.holdout_fraction).round() as usize;
    if n_hold == 0 || n_hold >= dataset.len() {
        return Err(Error::Input(format!("cannot hold out {n_hold} of {} images", dataset.len())));
    }
    let (train, heldout) = dataset.split(dataset.len() - n_hold);
    let mut scorer = SurrogateScorer::build(dataset.resolution(), dataset.num_classes, cfg, rng);
    let adam = AdamConfig::controller(cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.batch.max(1)) {
            let x = augment(train.batch(idx), cfg.min_aug_resolution, rng)?;
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let mut g = Graph::new();
            let xv = g.input(x);
            let out = scorer.forward(&mut g, xv, Binding::Train)?;
            let picked = g.pick(out.log_probs, &labels)?;
            let mean = g.mean_all(picked);
            let loss = g.scale(mean, -1.0);
            if !g.value(loss).item().is_finite() {
                return Err(Error::Training("surrogate scorer loss is not finite".into()));
            }
            let grads = g.backward(loss)?;
            let names: Vec<String> = g.param_names().map(String::from).collect();
            drop(g);
            scorer.params.zero_grad();
            grads.accumulate_into(&mut scorer.params)?;
            for name in &names {
                adam_step(name, scorer.params.get_mut(name)?, &adam)?;
            }
        }
    }
    let accuracy = scorer.accuracy(&heldout)?;
    scorer.heldout_accuracy = accuracy;
    if accuracy < cfg.required_accuracy {
        return Err(Error::Calibration { accuracy, required: cfg.required_accuracy });
    }
    Ok(scorer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::gen_synthetic_dataset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trains_to_calibration_on_synthetic_shapes() {
        let data = gen_synthetic_dataset(2000, 16, 4, 11).unwrap();
        let cfg = ScorerConfig::default();
        let scorer = train_surrogate(&data, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(scorer.heldout_accuracy() >= 0.9, "{}", scorer.heldout_accuracy());
        let (probs, feats) = scorer.evaluate(&data.images.narrow(0, 20)).unwrap();
        assert_eq!(feats.shape(), &[20, 64]);
        for row in probs.data().chunks_exact(4) {
            assert!(row.iter().all(|&p| p > 0.0));
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        let low = downsample(&data.images.narrow(0, 8), 8).unwrap();
        assert_eq!(scorer.evaluate(&low).unwrap().0.shape(), &[8, 4]);
    }

    #[test]
    fn impossible_budget_is_a_calibration_error() {
        let data = gen_synthetic_dataset(200, 16, 4, 12).unwrap();
        let cfg = ScorerConfig { epochs: 0, ..ScorerConfig::default() };
        assert!(matches!(train_surrogate(&data, &cfg, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Calibration { .. })));
    }
}
