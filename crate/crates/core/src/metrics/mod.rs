//! Surrogate Inception score, Fréchet distance, rewards and rank correlation.

mod linalg;
mod scorer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use linalg::{matrix_sqrt_psd, symmetric_eigen, Matrix};
pub use scorer::{train_surrogate, ScorerConfig, SurrogateScorer};

pub const IS_SPLITS: usize = 10;
pub const RECIP_FID_EPS: f64 = 1e-3;
pub const DEFAULT_MIN_EVAL_SAMPLES: usize = 500;
const ROW_SUM_TOL: f64 = 1e-4;

/// Inception score over `splits` contiguous chunks of the rows of `probs`;
/// the last chunk absorbs the remainder. Returns `(mean, std)`.
pub fn inception_score(probs: &Tensor, splits: usize) -> Result<(f64, f64)> {
    let [n, c] = *probs.shape() else {
        return Err(Error::Input(format!("probabilities must be N×C, got {:?}", probs.shape())));
    };
    if splits == 0 || n < splits {
        return Err(Error::SampleCount { need: splits.max(1), got: n });
    }
    for (i, row) in probs.data().chunks_exact(c).enumerate() {
        let sum: f64 = row.iter().map(|&p| f64::from(p)).sum();
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Input(format!("row {i} is not a probability distribution (sum {sum})")));
        }
    }
    let size = n / splits;
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let start = s * size;
        let end = if s + 1 == splits { n } else { start + size };
        let rows = &probs.data()[start * c..end * c];
        let m = (end - start) as f64;
        let mut marginal = vec![0.0f64; c];
        for row in rows.chunks_exact(c) {
            for (acc, &p) in marginal.iter_mut().zip(row) {
                *acc += f64::from(p) / m;
            }
        }
        let mut kl = 0.0;
        for row in rows.chunks_exact(c) {
            for (&p, &q) in row.iter().zip(&marginal) {
                let p = f64::from(p);
                if p > 0.0 {
                    kl += p * (p.ln() - q.ln());
                }
            }
        }
        scores.push((kl / m).exp());
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

/// Mean and covariance (1/(n−1)) of a feature matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn from_features(features: &Tensor) -> Result<Self> {
        let [n, f] = *features.shape() else {
            return Err(Error::Input(format!("features must be N×F, got {:?}", features.shape())));
        };
        if n < 2 {
            return Err(Error::SampleCount { need: 2, got: n });
        }
        let mut mean = vec![0.0f64; f];
        for row in features.data().chunks_exact(f) {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += f64::from(x);
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0f64; f * f];
        let mut centered = vec![0.0f64; f];
        for row in features.data().chunks_exact(f) {
            for ((c, &x), m) in centered.iter_mut().zip(row).zip(&mean) {
                *c = f64::from(x) - m;
            }
            for i in 0..f {
                let ci = centered[i];
                for j in i..f {
                    cov[i * f + j] += ci * centered[j];
                }
            }
        }
        for i in 0..f {
            for j in i..f {
                let v = cov[i * f + j] / (n - 1) as f64;
                cov[i * f + j] = v;
                cov[j * f + i] = v;
            }
        }
        Ok(GaussianStats { mean, cov })
    }

    fn cov_matrix(&self) -> Result<Matrix> {
        Matrix::new(self.dim(), self.cov.clone())
    }
}

/// `‖μa−μb‖² + Tr(Σa + Σb − 2·(Σa^½ Σb Σa^½)^½)`, clamped at zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.len() != a.dim() * a.dim() || b.cov.len() != b.dim() * b.dim() {
        return Err(Error::shape("frechet_distance", format!("dimensions {} and {}", a.dim(), b.dim())));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let sa = matrix_sqrt_psd(&a.cov_matrix()?)?;
    let inner = sa.matmul(&b.cov_matrix()?).matmul(&sa).symmetrized();
    let (eig, _) = linalg::psd_eigenvalues(&inner)?;
    let tr_sqrt: f64 = eig.iter().map(|v| v.sqrt()).sum();
    let d = mean_term + a.cov_matrix()?.trace() + b.cov_matrix()?.trace() - 2.0 * tr_sqrt;
    let scale = 1.0 + mean_term.abs() + a.cov_matrix()?.trace().abs() + b.cov_matrix()?.trace().abs();
    if d < -1e-6 * scale {
        return Err(Error::NonFinite(format!("Fréchet distance came out at {d}")));
    }
    Ok(d.max(0.0))
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman_rank_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Input(format!("need two equal-length lists of ≥ 2 values, got {} and {}", xs.len(), ys.len())));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite value in rank correlation input".into()));
    }
    let (rx, ry) = (average_ranks(xs), average_ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("one of the lists is constant".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RewardMetric {
    #[serde(rename = "is")]
    Is,
    #[serde(rename = "recip_fid")]
    RecipFid,
}

impl std::str::FromStr for RewardMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "is" | "IS" => Ok(RewardMetric::Is),
            "recip_fid" | "recipFID" | "fid" => Ok(RewardMetric::RecipFid),
            other => Err(Error::Config(format!("unknown metric `{other}` (expected is or recip_fid)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub is_mean: f64,
    pub is_std: f64,
    pub fid: Option<f64>,
    pub reward: f64,
    pub n_samples: usize,
}

/// Score generated images. IS is always reported; FID whenever reference
/// statistics are given. The reward is IS mean or `1/(FID + ε)`.
pub fn compute_reward(
    images: &Tensor,
    scorer: &SurrogateScorer,
    metric: RewardMetric,
    reference: Option<&GaussianStats>,
    min_samples: usize,
) -> Result<RewardReport> {
    let n = images.dim(0);
    if n < min_samples.max(IS_SPLITS) {
        return Err(Error::SampleCount { need: min_samples.max(IS_SPLITS), got: n });
    }
    let (probs, features) = scorer.evaluate(images)?;
    let (is_mean, is_std) = inception_score(&probs, IS_SPLITS)?;
    let fid = match reference {
        Some(r) => Some(frechet_distance(&GaussianStats::from_features(&features)?, r)?),
        None => None,
    };
    let reward = match metric {
        RewardMetric::Is => is_mean,
        RewardMetric::RecipFid => {
            let f = fid.ok_or_else(|| Error::Input("reciprocal-FID reward needs reference statistics".into()))?;
            1.0 / (f + RECIP_FID_EPS)
        }
    };
    if !reward.is_finite() {
        return Err(Error::Reward(format!("reward {reward} is not finite")));
    }
    Ok(RewardReport { is_mean, is_std, fid, reward, n_samples: n })
}
