//! Autoregressive LSTM policy over one cell's token slots.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genotype::TokenSpec;
use crate::networks::Binding;
use crate::tensor::{lstm_step, Graph, ParamStore, Tensor, Var};

pub const DEFAULT_HIDDEN: usize = 64;
const INIT_RANGE: f32 = 0.1;

const EMBED: &str = "ctrl.embed";
const W_IH: &str = "ctrl.lstm.w_ih";
const W_HH: &str = "ctrl.lstm.w_hh";
const BIAS: &str = "ctrl.lstm.bias";

pub fn head_weight(slot: usize) -> String {
    format!("ctrl.head{slot}.weight")
}

pub fn head_bias(slot: usize) -> String {
    format!("ctrl.head{slot}.bias")
}

/// One sampled cell: tokens with the per-step quantities the policy
/// gradient needs, plus the final hidden vector handed to the next stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub stage: usize,
    pub tokens: Vec<usize>,
    pub log_probs: Vec<f32>,
    pub entropies: Vec<f32>,
    pub hidden: Vec<f32>,
    /// Beam seed the sequence was drawn with (empty at stage 0).
    pub seed: Vec<f32>,
}

impl SampleTrace {
    pub fn seed(&self) -> Option<&[f32]> {
        (self.stage > 0).then_some(self.seed.as_slice())
    }

    pub fn total_log_prob(&self) -> f32 {
        self.log_probs.iter().sum()
    }

    pub fn total_entropy(&self) -> f32 {
        self.entropies.iter().sum()
    }
}

/// Scoring result for a fixed token sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub total_log_prob: f32,
    pub total_entropy: f32,
    pub log_probs: Vec<f32>,
    pub entropies: Vec<f32>,
    pub hidden: Vec<f32>,
}

/// Tape handles produced by [`Controller::score_graph`].
pub struct ScoreVars {
    pub total_log_prob: Var,
    pub total_entropy: Var,
}

struct Unrolled {
    tokens: Vec<usize>,
    log_probs: Vec<Var>,
    entropies: Vec<Var>,
    hidden: Var,
}

/// Stage-local controller θ: token embeddings (a start row plus one row per
/// slot value), one LSTM cell and a softmax head per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    stage: usize,
    hidden: usize,
    spec: TokenSpec,
    params: ParamStore,
}

impl Controller {
    pub fn new<R: Rng + ?Sized>(stage: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("controller hidden size must be positive".into()));
        }
        let spec = TokenSpec::for_cell(stage);
        let rows = 1 + spec.vocab_sizes().iter().sum::<usize>();
        let mut params = ParamStore::new();
        let mut init = |shape: &[usize]| Tensor::uniform(shape, -INIT_RANGE, INIT_RANGE, rng);
        params.insert(EMBED, init(&[rows, hidden]));
        params.insert(W_IH, init(&[4 * hidden, hidden]));
        params.insert(W_HH, init(&[4 * hidden, hidden]));
        params.insert(BIAS, init(&[4 * hidden]));
        for (slot, &v) in spec.vocab_sizes().iter().enumerate() {
            params.insert(head_weight(slot), init(&[v, hidden]));
            params.insert(head_bias(slot), init(&[v]));
        }
        Ok(Controller { stage, hidden, spec, params })
    }

    pub fn from_parts(stage: usize, hidden: usize, params: ParamStore) -> Result<Self> {
        let spec = TokenSpec::for_cell(stage);
        let rows = 1 + spec.vocab_sizes().iter().sum::<usize>();
        let mut expected = vec![
            (EMBED.to_string(), vec![rows, hidden]),
            (W_IH.to_string(), vec![4 * hidden, hidden]),
            (W_HH.to_string(), vec![4 * hidden, hidden]),
            (BIAS.to_string(), vec![4 * hidden]),
        ];
        for (slot, &v) in spec.vocab_sizes().iter().enumerate() {
            expected.push((head_weight(slot), vec![v, hidden]));
            expected.push((head_bias(slot), vec![v]));
        }
        if params.len() != expected.len() {
            return Err(Error::State(format!("controller for stage {stage} expects {} tensors, got {}", expected.len(), params.len())));
        }
        for (name, shape) in expected {
            if params.value(&name)?.shape() != shape.as_slice() {
                return Err(Error::State(format!("controller tensor `{name}` has the wrong shape")));
            }
        }
        Ok(Controller { stage, hidden, spec, params })
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn spec(&self) -> &TokenSpec {
        &self.spec
    }

    pub fn head_count(&self) -> usize {
        self.spec.slot_count()
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn embed_row(&self, step: usize, tokens: &[usize]) -> usize {
        if step == 0 {
            0
        } else {
            let prev = step - 1;
            1 + self.spec.vocab_sizes()[..prev].iter().sum::<usize>() + tokens[prev]
        }
    }

    fn check_seed(&self, seed: Option<&[f32]>) -> Result<()> {
        match seed {
            None if self.stage > 0 => Err(Error::State(format!("stage {} controller needs a beam seed", self.stage))),
            Some(_) if self.stage == 0 => Err(Error::State("stage 0 controller takes no beam seed".into())),
            Some(s) if s.len() != self.hidden => {
                Err(Error::State(format!("beam seed has length {}, hidden size is {}", s.len(), self.hidden)))
            }
            _ => Ok(()),
        }
    }

    fn unroll(
        &self,
        g: &mut Graph,
        binding: Binding,
        seed: Option<&[f32]>,
        mut choose: impl FnMut(usize, &[f32]) -> Result<usize>,
    ) -> Result<Unrolled> {
        self.check_seed(seed)?;
        let bind = |g: &mut Graph, name: &str| crate::networks::bind(g, &self.params, name, binding);
        let embed = bind(g, EMBED)?;
        let w_ih = bind(g, W_IH)?;
        let w_hh = bind(g, W_HH)?;
        let bias = bind(g, BIAS)?;
        let h0 = match seed {
            Some(s) => Tensor::new(vec![1, self.hidden], s.to_vec())?,
            None => Tensor::zeros(&[1, self.hidden]),
        };
        let mut h = g.input(h0);
        let mut c = g.input(Tensor::zeros(&[1, self.hidden]));
        let mut out = Unrolled { tokens: Vec::new(), log_probs: Vec::new(), entropies: Vec::new(), hidden: h };
        for slot in 0..self.spec.slot_count() {
            let x = g.embedding(embed, &[self.embed_row(slot, &out.tokens)])?;
            (h, c) = lstm_step(g, x, h, c, w_ih, w_hh, bias)?;
            let hw = bind(g, &head_weight(slot))?;
            let hb = bind(g, &head_bias(slot))?;
            let logits = g.linear(h, hw, Some(hb))?;
            let logp = g.log_softmax(logits)?;
            let token = choose(slot, g.value(logp).data())?;
            let vocab = self.spec.vocab(slot);
            if token >= vocab {
                return Err(Error::Decode { slot, value: token, vocab });
            }
            let picked = g.pick(logp, &[token])?;
            out.log_probs.push(g.sum_all(picked));
            let p = g.exp(logp);
            let plogp = g.mul(p, logp)?;
            let s = g.sum_all(plogp);
            out.entropies.push(g.scale(s, -1.0));
            out.tokens.push(token);
        }
        out.hidden = h;
        Ok(out)
    }

    fn collect(g: &Graph, u: &Unrolled) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
        (
            u.log_probs.iter().map(|&v| g.value(v).item()).collect(),
            u.entropies.iter().map(|&v| g.value(v).item()).collect(),
            g.value(u.hidden).data().to_vec(),
        )
    }

    /// Draw one token sequence, feeding each sampled token back in.
    pub fn sample<R: Rng + ?Sized>(&self, seed: Option<&[f32]>, rng: &mut R) -> Result<SampleTrace> {
        let mut g = Graph::new();
        let u = self.unroll(&mut g, Binding::Frozen, seed, |_, logp| {
            let draw: f64 = rng.random();
            let mut acc = 0.0f64;
            for (i, &lp) in logp.iter().enumerate() {
                acc += f64::from(lp.exp());
                if draw < acc {
                    return Ok(i);
                }
            }
            Ok(logp.len() - 1)
        })?;
        let (log_probs, entropies, hidden) = Self::collect(&g, &u);
        Ok(SampleTrace { stage: self.stage, tokens: u.tokens, log_probs, entropies, hidden, seed: seed.unwrap_or_default().to_vec() })
    }

    /// Recompute what [`Controller::sample`] records for a given sequence.
    pub fn log_prob_and_entropy(&self, tokens: &[usize], seed: Option<&[f32]>) -> Result<Scored> {
        self.check_tokens(tokens)?;
        let mut g = Graph::new();
        let u = self.unroll(&mut g, Binding::Frozen, seed, |slot, _| Ok(tokens[slot]))?;
        let (log_probs, entropies, hidden) = Self::collect(&g, &u);
        Ok(Scored {
            total_log_prob: log_probs.iter().sum(),
            total_entropy: entropies.iter().sum(),
            log_probs,
            entropies,
            hidden,
        })
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.len() != self.spec.slot_count() {
            return Err(Error::State(format!(
                "stage {} expects {} tokens, got {}",
                self.stage,
                self.spec.slot_count(),
                tokens.len()
            )));
        }
        Ok(())
    }

    /// Differentiable totals for `tokens` with θ bound as trainable.
    pub fn score_graph(&self, g: &mut Graph, tokens: &[usize], seed: Option<&[f32]>) -> Result<ScoreVars> {
        self.check_tokens(tokens)?;
        let u = self.unroll(g, Binding::Train, seed, |slot, _| Ok(tokens[slot]))?;
        let sum = |g: &mut Graph, vars: &[Var]| -> Result<Var> {
            let mut acc = vars[0];
            for &v in &vars[1..] {
                acc = g.add(acc, v)?;
            }
            Ok(acc)
        };
        Ok(ScoreVars { total_log_prob: sum(g, &u.log_probs)?, total_entropy: sum(g, &u.entropies)? })
    }

    /// Per-slot probability vectors along `tokens` (diagnostics).
    pub fn slot_distributions(&self, tokens: &[usize], seed: Option<&[f32]>) -> Result<Vec<Vec<f32>>> {
        self.check_tokens(tokens)?;
        let mut dists = Vec::new();
        let mut g = Graph::new();
        self.unroll(&mut g, Binding::Frozen, seed, |slot, logp| {
            dists.push(logp.iter().map(|l| l.exp()).collect());
            Ok(tokens[slot])
        })?;
        Ok(dists)
    }
}

/// The hidden vector a beam entry hands to the next stage's controller.
pub fn seed_from_beam(trace: &SampleTrace) -> Result<Vec<f32>> {
    let slots = TokenSpec::for_cell(trace.stage).slot_count();
    if trace.tokens.len() != slots || trace.log_probs.len() != slots || trace.entropies.len() != slots || trace.hidden.is_empty() {
        return Err(Error::State(format!("incomplete trace for stage {}", trace.stage)));
    }
    Ok(trace.hidden.clone())
}
