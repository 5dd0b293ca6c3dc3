//! Proximal policy optimization with a terminal reward, GAE credit
//! assignment, a per-token KL penalty and an adaptive KL coefficient.

mod gae;
mod kl;
mod optim;
mod rollout;
mod train;
mod update;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::RewardBreakdown;

pub use gae::compute_gae;
pub use kl::{kl_controller_step, KlController};
pub use optim::AdamW;
pub use rollout::{greedy_decode, log_softmax, rollout, sample_token, trajectory_seed, Decoded};
pub use train::{train, StepRecord, TrainingLog};
pub use update::{
    ppo_gradient, ppo_objective, ppo_update, prepare_advantages, value_loss, whiten, UpdateStats,
};

/// An autoregressive distribution over next tokens.
pub trait Policy: Sync {
    fn vocab_size(&self) -> usize;
    /// Longest prompt the policy accepts.
    fn max_context(&self) -> usize;
    fn eos_token(&self) -> u32;
    /// Unnormalized next-token scores given the full context.
    fn logits(&self, context: &[u32]) -> Result<Vec<f64>>;
}

/// A policy with a flat parameter vector and exact log-probability gradients.
pub trait TrainablePolicy: Policy {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Adds `scale * d log pi_T(action | context) / d params` to `grad`, where
    /// `pi_T` is the softmax of the logits divided by `temperature`.
    fn accumulate_log_prob_grad(
        &self,
        context: &[u32],
        action: u32,
        temperature: f64,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()>;
}

/// State-value estimator trained alongside the policy.
pub trait ValueFunction: Sync {
    fn value(&self, context: &[u32]) -> Result<f64>;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Adds `scale * dV(context) / d params` to `grad`.
    fn accumulate_value_grad(&self, context: &[u32], scale: f64, grad: &mut [f64]) -> Result<()>;
}

/// Scores a completed rollout.
pub trait RewardFn: Sync {
    fn score(&self, prompt: &[u32], actions: &[u32], finished: bool) -> RewardBreakdown;
}

/// One sampled completion with everything the update needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub prompt_tokens: Vec<u32>,
    pub actions: Vec<u32>,
    /// Log-probabilities under the sampling policy, frozen at rollout time.
    pub online_logprobs: Vec<f64>,
    pub reference_logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub kl_terms: Vec<f64>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
    pub terminal_reward: f64,
    pub finished: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Context before action `t`: the prompt followed by earlier actions.
    pub fn context(&self, t: usize) -> Vec<u32> {
        let mut ctx = self.prompt_tokens.clone();
        ctx.extend_from_slice(&self.actions[..t]);
        ctx
    }

    /// Sum of per-token KL estimates over the sequence.
    pub fn kl_sum(&self) -> f64 {
        self.kl_terms.iter().sum()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let t = self.actions.len();
        for (what, len) in [
            ("online_logprobs", self.online_logprobs.len()),
            ("reference_logprobs", self.reference_logprobs.len()),
            ("values", self.values.len()),
            ("kl_terms", self.kl_terms.len()),
            ("advantages", self.advantages.len()),
            ("value_targets", self.value_targets.len()),
        ] {
            if len != t {
                return Err(Error::LengthMismatch {
                    what,
                    expected: t,
                    actual: len,
                });
            }
        }
        Ok(())
    }

    /// Fills `values` from the value function at every state.
    pub fn fill_values<V: ValueFunction + ?Sized>(&mut self, value: &V) -> Result<()> {
        let mut ctx = self.prompt_tokens.clone();
        let mut out = Vec::with_capacity(self.actions.len());
        for &a in &self.actions {
            out.push(value.value(&ctx)?);
            ctx.push(a);
        }
        self.values = out;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_epsilon: f64,
    pub ppo_epochs: usize,
    pub value_coef: f64,
    pub micro_batch: usize,
    pub grad_accum: usize,
    pub learning_rate: f64,
    /// Step size of the value function's optimizer.
    pub value_learning_rate: f64,
    pub weight_decay: f64,
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub advantage_whitening: bool,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lambda: 0.95,
            clip_epsilon: 0.2,
            ppo_epochs: 4,
            value_coef: 0.1,
            micro_batch: 4,
            grad_accum: 4,
            learning_rate: 1e-6,
            value_learning_rate: 1e-6,
            weight_decay: 0.0,
            temperature: 0.7,
            max_new_tokens: 241,
            advantage_whitening: true,
            seed: 0,
        }
    }
}

impl PpoConfig {
    /// Trajectories per rollout batch.
    pub fn batch_size(&self) -> usize {
        self.micro_batch * self.grad_accum
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| {
            Err(Error::InvalidConfig {
                field,
                reason: reason.to_owned(),
            })
        };
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda", "must lie in [0, 1]");
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon.is_finite()) {
            return bad("clip_epsilon", "must be positive");
        }
        if self.ppo_epochs == 0 {
            return bad("ppo_epochs", "must be positive");
        }
        if !(self.value_coef >= 0.0 && self.value_coef.is_finite()) {
            return bad("value_coef", "must be non-negative");
        }
        if self.micro_batch == 0 {
            return bad("micro_batch", "must be positive");
        }
        if self.grad_accum == 0 {
            return bad("grad_accum", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !(self.value_learning_rate > 0.0 && self.value_learning_rate.is_finite()) {
            return bad("value_learning_rate", "must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be non-negative");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", "must be positive");
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens", "must be positive");
        }
        Ok(())
    }
}
