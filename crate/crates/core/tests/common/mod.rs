#![allow(dead_code)]

pub mod gradcheck;
pub mod reference;

use std::sync::Mutex;

use autogan::genotype::Genotype;
use autogan::metrics::RewardReport;
use autogan::networks::{ChildModel, Supernet};
use autogan::search::{Event, Evaluator, SearchConfig, SearchObserver, SearchState, SharedStepLog};
use autogan::Result;

/// Smallest networks that still exercise every code path: 4 channels, 2×2
/// base, 8 shared steps per epoch.
pub fn tiny_config() -> SearchConfig {
    SearchConfig {
        total_iters: 6,
        u_stage: 2,
        shared_epochs_per_iter: 1,
        ctrl_steps_per_iter: 3,
        num_cells: 3,
        top_k: 2,
        num_candidates: 3,
        window_len: 4,
        retrain_generator_steps: 5,
        d_batch: 4,
        g_batch: 4,
        hidden_size: 8,
        base_resolution: 2,
        channels: 4,
        disc_channels: 4,
        z_dim: 8,
        train_size: 32,
        eval_size: 16,
        min_eval_samples: 10,
        final_eval_samples: 10,
        ..SearchConfig::default()
    }
}

/// FNV-1a over the token sequence, mapped to [1, 2).
pub fn token_hash(genotype: &Genotype) -> f64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in genotype.tokens() {
        h ^= t as u64 + 1;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    1.0 + (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Deterministic evaluator that never runs a network: every genotype gets a
/// fixed pseudo-random reward, and `favourite` (if any) gets 10.
#[derive(Default)]
pub struct RiggedEvaluator {
    pub favourite: Option<Genotype>,
    pub calls: Mutex<usize>,
}

impl RiggedEvaluator {
    pub fn new(favourite: Option<Genotype>) -> Self {
        RiggedEvaluator { favourite, calls: Mutex::new(0) }
    }

    pub fn reward(&self, genotype: &Genotype) -> RewardReport {
        *self.calls.lock().unwrap() += 1;
        let r = if self.favourite.as_ref() == Some(genotype) { 10.0 } else { token_hash(genotype) };
        RewardReport { is_mean: r, is_std: 0.0, fid: None, reward: r, n_samples: 10 }
    }
}

impl Evaluator for RiggedEvaluator {
    fn proxy(&self, _supernet: &Supernet, genotype: &Genotype) -> Result<RewardReport> {
        Ok(self.reward(genotype))
    }

    fn score_child(&self, child: &ChildModel) -> Result<RewardReport> {
        Ok(self.reward(&child.genotype))
    }
}

/// Observer that keeps every shared-step loss and event.
#[derive(Default)]
pub struct Recorder {
    pub losses: Vec<SharedStepLog>,
    pub events: Vec<Event>,
    pub controller_checksums: Vec<(usize, String)>,
    pub supernet_checksums: Vec<(usize, String)>,
}

impl SearchObserver for Recorder {
    fn shared_step(&mut self, log: &SharedStepLog) -> Result<()> {
        self.losses.push(log.clone());
        Ok(())
    }

    fn event(&mut self, event: &Event) -> Result<()> {
        self.events.push(event.clone());
        Ok(())
    }

    fn iteration_done(&mut self, state: &SearchState) -> Result<()> {
        self.controller_checksums.push((state.iter, state.controller.params().checksum()));
        self.supernet_checksums.push((state.iter, state.supernet.params().checksum()));
        Ok(())
    }
}

impl Recorder {
    /// Losses grouped by iteration as `(g, d)` pairs.
    pub fn losses_by_iter(&self, total_iters: usize) -> Vec<Vec<(f32, f32)>> {
        let mut out = vec![Vec::new(); total_iters];
        for l in &self.losses {
            out[l.iter].push((l.g_loss, l.d_loss));
        }
        out
    }
}
