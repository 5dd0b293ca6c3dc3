use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rollout::{rollout, trajectory_seed};
use super::{
    compute_gae, ppo_update, AdamW, KlController, Policy, PpoConfig, RewardFn, TrainablePolicy, UpdateStats,
    ValueFunction,
};
use crate::error::{Error, Result};
use crate::metrics::{mean, population_std};

/// Summary of one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub finished_fraction: f64,
    /// Means over finished rollouts with at least one word.
    pub wa_component: Option<f64>,
    pub sl_component: Option<f64>,
    pub sentence_wa_std: Option<f64>,
    /// Batch mean of the summed per-token KL estimate of each sequence.
    pub kl: f64,
    pub kl_per_token: f64,
    /// Coefficient used for this step's update.
    pub beta_kl: f64,
    pub mean_length: f64,
    pub update: UpdateStats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<StepRecord>,
    /// Why training stopped early; parameters are those of the last good step.
    pub halted: Option<String>,
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| mean(&v))
}

/// Runs `steps` iterations of rollout, reward, GAE, PPO update and KL
/// controller adjustment. `on_step` sees every record together with the
/// updated parameters, which is where callers write logs and checkpoints.
///
/// Prompts are drawn uniformly with replacement, `cfg.batch_size()` per step.
/// The measured KL fed to the controller is the batch mean of each sequence's
/// summed per-token estimate.
#[allow(clippy::too_many_arguments)]
pub fn train<P, Q, V, R>(
    policy: &mut P,
    reference: &Q,
    value: &mut V,
    prompts: &[Vec<u32>],
    reward: &R,
    cfg: &PpoConfig,
    ctrl: &mut KlController,
    steps: usize,
    on_step: &mut dyn FnMut(&StepRecord, &P, &V) -> Result<()>,
) -> Result<TrainingLog>
where
    P: TrainablePolicy,
    Q: Policy + ?Sized,
    V: ValueFunction,
    R: RewardFn + ?Sized,
{
    cfg.validate()?;
    ctrl.validate()?;
    if prompts.is_empty() {
        return Err(Error::InvalidArgument("empty prompt set".into()));
    }
    let mut policy_opt = AdamW::new(policy.params().len(), cfg.learning_rate, cfg.weight_decay);
    let mut value_opt = AdamW::new(value.params().len(), cfg.value_learning_rate, cfg.weight_decay);
    let mut log = TrainingLog::default();

    for step in 0..steps {
        let mut pick = ChaCha8Rng::seed_from_u64(trajectory_seed(cfg.seed, step as u64, u64::MAX));
        let batch_prompts: Vec<Vec<u32>> = (0..cfg.batch_size())
            .map(|_| prompts[pick.random_range(0..prompts.len())].clone())
            .collect();
        let rollout_seed = trajectory_seed(cfg.seed, step as u64, u64::MAX - 1);
        let mut batch = rollout(&*policy, reference, &batch_prompts, cfg, rollout_seed)?;

        let breakdowns: Vec<_> = batch
            .par_iter()
            .map(|t| reward.score(&t.prompt_tokens, &t.actions, t.finished))
            .collect();
        for (traj, b) in batch.iter_mut().zip(&breakdowns) {
            traj.terminal_reward = b.total;
            traj.fill_values(&*value)?;
            let (adv, targets) = compute_gae(traj, cfg.gamma, cfg.lambda)?;
            traj.advantages = adv;
            traj.value_targets = targets;
        }

        let good_policy = policy.params().to_vec();
        let good_value = value.params().to_vec();
        let beta_kl = ctrl.beta_kl;
        let update = ppo_update(policy, value, &batch, beta_kl, cfg, &mut policy_opt, &mut value_opt);
        let update = match update {
            Ok(u) if policy.params().iter().chain(value.params()).all(|x| x.is_finite()) => u,
            outcome => {
                policy.params_mut().copy_from_slice(&good_policy);
                value.params_mut().copy_from_slice(&good_value);
                log.halted = Some(match outcome {
                    Err(e) => format!("step {step}: {e}"),
                    Ok(_) => format!("step {step}: non-finite parameters"),
                });
                break;
            }
        };

        let rewards: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        let kl_sums: Vec<f64> = batch.iter().map(|t| t.kl_sum()).collect();
        let measured_kl = mean(&kl_sums);
        let tokens: usize = batch.iter().map(|t| t.len()).sum();
        let scored = || breakdowns.iter().filter(|b| b.sentence_wa_std.is_some());
        let record = StepRecord {
            step,
            reward_mean: mean(&rewards),
            reward_std: population_std(&rewards),
            finished_fraction: batch.iter().filter(|t| t.finished).count() as f64 / batch.len() as f64,
            wa_component: mean_of(scored().map(|b| b.wa_component)),
            sl_component: mean_of(scored().map(|b| b.sl_component)),
            sentence_wa_std: mean_of(scored().filter_map(|b| b.sentence_wa_std)),
            kl: measured_kl,
            kl_per_token: kl_sums.iter().sum::<f64>() / tokens as f64,
            beta_kl,
            mean_length: tokens as f64 / batch.len() as f64,
            update,
        };
        ctrl.update(measured_kl);
        on_step(&record, policy, value)?;
        log.records.push(record);
    }
    Ok(log)
}
