//! REINFORCE with a moving-average baseline and an entropy bonus.

use serde::{Deserialize, Serialize};

use crate::controller::{Controller, SampleTrace};
use crate::error::{Error, Result};
use crate::tensor::{adam_step, AdamConfig, Graph};

pub const DEFAULT_BASELINE_DECAY: f32 = 0.9;
pub const DEFAULT_ENTROPY_WEIGHT: f32 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub value: f32,
    pub decay: f32,
    pub initialized: bool,
}

impl BaselineState {
    pub fn new(decay: f32) -> Self {
        BaselineState { value: 0.0, decay, initialized: false }
    }
}

impl Default for BaselineState {
    fn default() -> Self {
        Self::new(DEFAULT_BASELINE_DECAY)
    }
}

/// First reward sets `b`; afterwards `b ← β·b + (1−β)·reward`.
pub fn update_baseline(state: BaselineState, reward: f32) -> Result<BaselineState> {
    if !reward.is_finite() {
        return Err(Error::Reward(format!("reward {reward} is not finite")));
    }
    let value = if state.initialized { state.decay * state.value + (1.0 - state.decay) * reward } else { reward };
    Ok(BaselineState { value, initialized: true, ..state })
}

/// What one update did, for the per-step log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReinforceReport {
    pub reward: f32,
    /// Baseline used for the advantage (before this reward was folded in).
    pub baseline: f32,
    pub advantage: f32,
    pub entropy: f32,
    pub log_prob: f32,
    pub surrogate_loss: f32,
}

/// One Adam step on θ minimizing `−[(R − b)·Σ log π + λ·Σ H]`, then the
/// baseline update. The advantage uses the baseline from before this reward;
/// on the very first reward the advantage is zero.
pub fn reinforce_update(
    ctrl: &mut Controller,
    trace: &SampleTrace,
    reward: f32,
    baseline: &mut BaselineState,
    entropy_weight: f32,
    lr: f32,
) -> Result<ReinforceReport> {
    if trace.stage != ctrl.stage() {
        return Err(Error::State(format!("trace from stage {} given to the stage {} controller", trace.stage, ctrl.stage())));
    }
    if !reward.is_finite() {
        return Err(Error::Reward(format!("reward {reward} is not finite")));
    }
    let b = if baseline.initialized { baseline.value } else { reward };
    let advantage = reward - b;
    let mut g = Graph::new();
    let vars = ctrl.score_graph(&mut g, &trace.tokens, trace.seed())?;
    let weighted_lp = g.scale(vars.total_log_prob, advantage);
    let weighted_h = g.scale(vars.total_entropy, entropy_weight);
    let objective = g.add(weighted_lp, weighted_h)?;
    let loss = g.scale(objective, -1.0);
    let report = ReinforceReport {
        reward,
        baseline: b,
        advantage,
        entropy: g.value(vars.total_entropy).item(),
        log_prob: g.value(vars.total_log_prob).item(),
        surrogate_loss: g.value(loss).item(),
    };
    let grads = g.backward(loss)?;
    let names: Vec<String> = g.param_names().map(String::from).collect();
    drop(g);
    ctrl.params_mut().zero_grad();
    grads.accumulate_into(ctrl.params_mut())?;
    let cfg = AdamConfig::controller(lr);
    for name in &names {
        adam_step(name, ctrl.params_mut().get_mut(name)?, &cfg)?;
    }
    *baseline = update_baseline(*baseline, reward)?;
    Ok(report)
}
