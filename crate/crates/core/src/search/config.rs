use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{RewardMetric, ScorerConfig};
use crate::networks::{GanStepOptions, NetConfig};
use crate::tensor::hex_digest;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetSource {
    Synthetic,
    Cifar10(String),
}

/// Every knob of a search run. Defaults are the desk profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub total_iters: usize,
    pub u_stage: usize,
    pub shared_epochs_per_iter: usize,
    pub ctrl_steps_per_iter: usize,
    pub num_cells: usize,
    pub top_k: usize,
    pub num_candidates: usize,
    pub reset_enabled: bool,
    pub reset_threshold: f64,
    pub window_len: usize,
    pub metric: RewardMetric,
    pub retrain_generator_steps: usize,
    pub g_lr: f32,
    pub d_lr: f32,
    pub ctrl_lr: f32,
    pub d_batch: usize,
    pub g_batch: usize,
    pub entropy_weight: f32,
    pub baseline_decay: f32,
    pub hidden_size: usize,
    pub base_resolution: usize,
    pub channels: usize,
    pub disc_channels: usize,
    pub z_dim: usize,
    pub dataset: DatasetSource,
    pub train_size: usize,
    pub eval_size: usize,
    pub num_classes: usize,
    pub min_eval_samples: usize,
    pub final_eval_samples: usize,
    pub scorer_epochs: usize,
    pub scorer_width: usize,
    pub scorer_required_accuracy: f64,
    /// Test rig: after this many shared steps since the last (re)start the
    /// learning rates drop to zero and the minibatch freezes. 0 disables it.
    pub collapse_after_steps: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            total_iters: 12,
            u_stage: 4,
            shared_epochs_per_iter: 2,
            ctrl_steps_per_iter: 10,
            num_cells: 3,
            top_k: 3,
            num_candidates: 10,
            reset_enabled: true,
            reset_threshold: 1e-3,
            window_len: 50,
            metric: RewardMetric::Is,
            retrain_generator_steps: 300,
            g_lr: 2e-4,
            d_lr: 2e-4,
            ctrl_lr: 3.5e-4,
            d_batch: 16,
            g_batch: 32,
            entropy_weight: 1e-4,
            baseline_decay: 0.9,
            hidden_size: 64,
            base_resolution: 2,
            channels: 16,
            disc_channels: 16,
            z_dim: 64,
            dataset: DatasetSource::Synthetic,
            train_size: 1000,
            eval_size: 500,
            num_classes: 4,
            min_eval_samples: 500,
            final_eval_samples: 1000,
            scorer_epochs: 20,
            scorer_width: 16,
            scorer_required_accuracy: 0.9,
            collapse_after_steps: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(value: &str, what: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("`{value}` is not a valid {what}"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("`{value}` is not a boolean")),
    }
}

impl SearchConfig {
    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let int = |v: &str| parse::<usize>(v, "non-negative integer");
        let f32v = |v: &str| parse::<f32>(v, "number");
        match key {
            "total_iters" => self.total_iters = int(value)?,
            "u_stage" => self.u_stage = int(value)?,
            "shared_epochs_per_iter" => self.shared_epochs_per_iter = int(value)?,
            "ctrl_steps_per_iter" => self.ctrl_steps_per_iter = int(value)?,
            "num_cells" => self.num_cells = int(value)?,
            "top_k" | "k" => self.top_k = int(value)?,
            "num_candidates" | "m" => self.num_candidates = int(value)?,
            "reset_enabled" => self.reset_enabled = parse_bool(value)?,
            "reset_threshold" => self.reset_threshold = parse(value, "number")?,
            "window_len" => self.window_len = int(value)?,
            "metric" => self.metric = value.parse().map_err(|e: Error| e.to_string())?,
            "retrain_generator_steps" => self.retrain_generator_steps = int(value)?,
            "g_lr" => self.g_lr = f32v(value)?,
            "d_lr" => self.d_lr = f32v(value)?,
            "ctrl_lr" => self.ctrl_lr = f32v(value)?,
            "d_batch" => self.d_batch = int(value)?,
            "g_batch" => self.g_batch = int(value)?,
            "entropy_weight" => self.entropy_weight = f32v(value)?,
            "baseline_decay" => self.baseline_decay = f32v(value)?,
            "hidden_size" => self.hidden_size = int(value)?,
            "base_resolution" => self.base_resolution = int(value)?,
            "channels" => self.channels = int(value)?,
            "disc_channels" => self.disc_channels = int(value)?,
            "z_dim" => self.z_dim = int(value)?,
            "dataset" => {
                self.dataset = match value.split_once(':') {
                    None if value == "synthetic" => DatasetSource::Synthetic,
                    Some(("cifar10", dir)) if !dir.is_empty() => DatasetSource::Cifar10(dir.to_string()),
                    _ => return Err(format!("`{value}` is not `synthetic` or `cifar10:<dir>`")),
                }
            }
            "train_size" => self.train_size = int(value)?,
            "eval_size" => self.eval_size = int(value)?,
            "num_classes" => self.num_classes = int(value)?,
            "min_eval_samples" => self.min_eval_samples = int(value)?,
            "final_eval_samples" => self.final_eval_samples = int(value)?,
            "scorer_epochs" => self.scorer_epochs = int(value)?,
            "scorer_width" => self.scorer_width = int(value)?,
            "scorer_required_accuracy" => self.scorer_required_accuracy = parse(value, "number")?,
            "collapse_after_steps" => self.collapse_after_steps = int(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_text(&self) -> String {
        let dataset = match &self.dataset {
            DatasetSource::Synthetic => "synthetic".to_string(),
            DatasetSource::Cifar10(d) => format!("cifar10:{d}"),
        };
        let metric = match self.metric {
            RewardMetric::Is => "is",
            RewardMetric::RecipFid => "recip_fid",
        };
        [
            ("total_iters", self.total_iters.to_string()),
            ("u_stage", self.u_stage.to_string()),
            ("shared_epochs_per_iter", self.shared_epochs_per_iter.to_string()),
            ("ctrl_steps_per_iter", self.ctrl_steps_per_iter.to_string()),
            ("num_cells", self.num_cells.to_string()),
            ("top_k", self.top_k.to_string()),
            ("num_candidates", self.num_candidates.to_string()),
            ("reset_enabled", self.reset_enabled.to_string()),
            ("reset_threshold", self.reset_threshold.to_string()),
            ("window_len", self.window_len.to_string()),
            ("metric", metric.to_string()),
            ("retrain_generator_steps", self.retrain_generator_steps.to_string()),
            ("g_lr", self.g_lr.to_string()),
            ("d_lr", self.d_lr.to_string()),
            ("ctrl_lr", self.ctrl_lr.to_string()),
            ("d_batch", self.d_batch.to_string()),
            ("g_batch", self.g_batch.to_string()),
            ("entropy_weight", self.entropy_weight.to_string()),
            ("baseline_decay", self.baseline_decay.to_string()),
            ("hidden_size", self.hidden_size.to_string()),
            ("base_resolution", self.base_resolution.to_string()),
            ("channels", self.channels.to_string()),
            ("disc_channels", self.disc_channels.to_string()),
            ("z_dim", self.z_dim.to_string()),
            ("dataset", dataset),
            ("train_size", self.train_size.to_string()),
            ("eval_size", self.eval_size.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("min_eval_samples", self.min_eval_samples.to_string()),
            ("final_eval_samples", self.final_eval_samples.to_string()),
            ("scorer_epochs", self.scorer_epochs.to_string()),
            ("scorer_width", self.scorer_width.to_string()),
            ("scorer_required_accuracy", self.scorer_required_accuracy.to_string()),
            ("collapse_after_steps", self.collapse_after_steps.to_string()),
        ]
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
    }

    pub fn hash(&self) -> String {
        hex_digest(Sha256::digest(self.to_text().as_bytes()).as_slice())
    }

    /// Number of growth events the loop performs: iterations `i` in
    /// `1..total_iters` with `i % u_stage == 0`.
    pub fn grow_count(&self) -> usize {
        if self.u_stage == 0 || self.total_iters == 0 {
            0
        } else {
            (self.total_iters - 1) / self.u_stage
        }
    }

    pub fn output_resolution(&self) -> usize {
        self.base_resolution << self.num_cells
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                problems.push(msg.to_string());
            }
        };
        need(self.total_iters > 0, "total_iters must be positive");
        need(self.u_stage > 0, "u_stage must be positive");
        need(self.u_stage == 0 || self.total_iters % self.u_stage == 0, "total_iters must be divisible by u_stage");
        need(self.num_cells >= 1, "num_cells must be at least 1");
        need(
            self.grow_count() + 1 == self.num_cells,
            "growth schedule must reach num_cells: need (total_iters - 1) / u_stage == num_cells - 1",
        );
        need(self.top_k >= 1 && self.top_k <= self.num_candidates, "need 1 <= top_k <= num_candidates");
        need(self.window_len >= 2, "window_len must be at least 2");
        need(self.reset_threshold >= 0.0 && !self.reset_threshold.is_nan(), "reset_threshold must be >= 0");
        need(self.d_batch >= 2 && self.g_batch >= 2, "batch sizes must be at least 2 (batch normalization)");
        need(self.hidden_size > 0 && self.channels > 0 && self.disc_channels > 0 && self.z_dim > 0, "sizes must be positive");
        need(self.base_resolution > 0, "base_resolution must be positive");
        need(self.train_size >= self.d_batch, "train_size must cover one discriminator batch");
        need(self.eval_size >= 2, "eval_size must be at least 2");
        need(self.min_eval_samples >= 10 && self.final_eval_samples >= 10, "evaluation needs at least 10 samples");
        need(self.g_lr >= 0.0 && self.d_lr >= 0.0 && self.ctrl_lr >= 0.0, "learning rates must be >= 0");
        need(self.baseline_decay > 0.0 && self.baseline_decay < 1.0, "baseline_decay must be in (0, 1)");
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            max_cells: self.num_cells,
            base_resolution: self.base_resolution,
            channels: self.channels,
            disc_channels: self.disc_channels,
            z_dim: self.z_dim,
            image_channels: crate::genotype::IMAGE_CHANNELS,
        }
    }

    pub fn step_options(&self) -> GanStepOptions {
        GanStepOptions { g_batch: self.g_batch, g_lr: self.g_lr, d_lr: self.d_lr }
    }

    pub fn scorer_config(&self) -> ScorerConfig {
        ScorerConfig {
            epochs: self.scorer_epochs,
            width: self.scorer_width,
            required_accuracy: self.scorer_required_accuracy,
            min_aug_resolution: (self.base_resolution * 2).max(2),
            ..ScorerConfig::default()
        }
    }
}
