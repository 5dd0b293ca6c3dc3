use serde::{Deserialize, Serialize};

use super::rollout::log_softmax;
use super::{AdamW, PpoConfig, TrainablePolicy, Trajectory, ValueFunction};
use crate::error::{Error, Result};

const WHITEN_EPS: f64 = 1e-8;

/// Shifts and scales all entries jointly to zero mean and unit variance.
/// Leaves a single entry untouched.
pub fn whiten(rows: &mut [Vec<f64>]) {
    let n: usize = rows.iter().map(Vec::len).sum();
    if n < 2 {
        return;
    }
    let mean = rows.iter().flatten().sum::<f64>() / n as f64;
    let var = rows.iter().flatten().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = (var + WHITEN_EPS).sqrt();
    for x in rows.iter_mut().flatten() {
        *x = (*x - mean) / scale;
    }
}

/// KL-penalized advantages `d_t - beta_kl * KL_t`, whitened across the batch
/// when `whitening` is set.
pub fn prepare_advantages(batch: &[Trajectory], beta_kl: f64, whitening: bool) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = batch
        .iter()
        .map(|t| t.advantages.iter().zip(&t.kl_terms).map(|(d, k)| d - beta_kl * k).collect())
        .collect();
    if whitening {
        whiten(&mut rows);
    }
    rows
}

/// Mean over trajectories of the per-trajectory mean squared error between
/// recorded values and value targets.
pub fn value_loss(batch: &[Trajectory]) -> f64 {
    let per_traj: Vec<f64> = batch
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.values.iter().zip(&t.value_targets).map(|(v, g)| (v - g).powi(2)).sum::<f64>() / t.len() as f64
        })
        .collect();
    if per_traj.is_empty() {
        return 0.0;
    }
    per_traj.iter().sum::<f64>() / per_traj.len() as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Tally {
    policy_loss: f64,
    value_loss: f64,
    ratio_sum: f64,
    clipped: usize,
    tokens: usize,
}

impl Tally {
    fn total(&self, value_coef: f64) -> f64 {
        self.policy_loss + value_coef * self.value_loss
    }
}

/// Loss of one group of trajectories, optionally accumulating its gradient.
///
/// `policy_loss = -mean_i mean_t min(r A, clip(r, 1 - eps, 1 + eps) A)` and
/// `value_loss = mean_i mean_t (V(s_t) - target_t)^2`, with `r` the ratio of
/// current to rollout-time probability of the sampled token.
fn group_loss<P, V>(
    policy: &P,
    value: &V,
    group: &[Trajectory],
    advantages: &[Vec<f64>],
    cfg: &PpoConfig,
    mut grads: Option<(&mut [f64], &mut [f64])>,
) -> Result<Tally>
where
    P: TrainablePolicy + ?Sized,
    V: ValueFunction + ?Sized,
{
    let mut tally = Tally::default();
    let b = group.len() as f64;
    for (traj, adv) in group.iter().zip(advantages) {
        traj.check()?;
        if adv.len() != traj.len() {
            return Err(Error::LengthMismatch {
                what: "advantages",
                expected: traj.len(),
                actual: adv.len(),
            });
        }
        let n = traj.len() as f64;
        let mut ctx = traj.prompt_tokens.clone();
        for (t, &action) in traj.actions.iter().enumerate() {
            let lp = log_softmax(&policy.logits(&ctx)?, cfg.temperature);
            let ratio = (lp[action as usize] - traj.online_logprobs[t]).exp();
            let clipped_ratio = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
            let a = adv[t];
            let unclipped = ratio * a;
            let surrogate = unclipped.min(clipped_ratio * a);
            tally.policy_loss -= surrogate / (n * b);
            tally.ratio_sum += ratio;
            tally.tokens += 1;
            if (ratio - 1.0).abs() > cfg.clip_epsilon {
                tally.clipped += 1;
            }

            let v = value.value(&ctx)?;
            let err = v - traj.value_targets[t];
            tally.value_loss += err * err / (n * b);

            if let Some((pg, vg)) = grads.as_mut() {
                if unclipped <= clipped_ratio * a {
                    policy.accumulate_log_prob_grad(&ctx, action, cfg.temperature, -a * ratio / (n * b), pg)?;
                }
                value.accumulate_value_grad(&ctx, cfg.value_coef * 2.0 * err / (n * b), vg)?;
            }
            ctx.push(action);
        }
    }
    Ok(tally)
}

/// Combined loss `policy_loss + value_coef * value_loss` over a batch with
/// precomputed (penalized, possibly whitened) advantages.
pub fn ppo_objective<P, V>(
    policy: &P,
    value: &V,
    batch: &[Trajectory],
    advantages: &[Vec<f64>],
    cfg: &PpoConfig,
) -> Result<f64>
where
    P: TrainablePolicy + ?Sized,
    V: ValueFunction + ?Sized,
{
    Ok(group_loss(policy, value, batch, advantages, cfg, None)?.total(cfg.value_coef))
}

/// The loss of [`ppo_objective`] with its gradients in policy and value
/// parameters.
pub fn ppo_gradient<P, V>(
    policy: &P,
    value: &V,
    batch: &[Trajectory],
    advantages: &[Vec<f64>],
    cfg: &PpoConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>)>
where
    P: TrainablePolicy + ?Sized,
    V: ValueFunction + ?Sized,
{
    let mut pg = vec![0.0; policy.params().len()];
    let mut vg = vec![0.0; value.params().len()];
    let tally = group_loss(policy, value, batch, advantages, cfg, Some((&mut pg, &mut vg)))?;
    Ok((tally.total(cfg.value_coef), pg, vg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Averages over every micro-batch of every epoch.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub total_loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    /// Mean per-token KL estimate of the batch.
    pub mean_kl: f64,
    pub optimizer_steps: usize,
}

fn finite(what: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_owned()))
    }
}

/// Runs `cfg.ppo_epochs` passes over the batch. Each pass walks the batch in
/// micro-batches of `cfg.micro_batch` trajectories and applies one optimizer
/// step per `cfg.grad_accum` micro-batches, averaging their gradients.
///
/// A non-finite loss or gradient aborts before the offending step is applied.
pub fn ppo_update<P, V>(
    policy: &mut P,
    value: &mut V,
    batch: &[Trajectory],
    beta_kl: f64,
    cfg: &PpoConfig,
    policy_opt: &mut AdamW,
    value_opt: &mut AdamW,
) -> Result<UpdateStats>
where
    P: TrainablePolicy + ?Sized,
    V: ValueFunction + ?Sized,
{
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let advantages = prepare_advantages(batch, beta_kl, cfg.advantage_whitening);
    let mut sum = Tally::default();
    let mut groups = 0usize;
    let mut steps = 0usize;
    let mut pg = vec![0.0; policy.params().len()];
    let mut vg = vec![0.0; value.params().len()];
    for _ in 0..cfg.ppo_epochs {
        let chunks: Vec<(&[Trajectory], &[Vec<f64>])> = batch
            .chunks(cfg.micro_batch)
            .zip(advantages.chunks(cfg.micro_batch))
            .collect();
        for window in chunks.chunks(cfg.grad_accum) {
            pg.iter_mut().for_each(|g| *g = 0.0);
            vg.iter_mut().for_each(|g| *g = 0.0);
            for (group, adv) in window {
                let t = group_loss(&*policy, &*value, group, adv, cfg, Some((&mut pg, &mut vg)))?;
                if !t.total(cfg.value_coef).is_finite() {
                    return Err(Error::NonFinite("ppo loss".into()));
                }
                sum.policy_loss += t.policy_loss;
                sum.value_loss += t.value_loss;
                sum.ratio_sum += t.ratio_sum;
                sum.clipped += t.clipped;
                sum.tokens += t.tokens;
                groups += 1;
            }
            let k = window.len() as f64;
            pg.iter_mut().for_each(|g| *g /= k);
            vg.iter_mut().for_each(|g| *g /= k);
            finite("policy gradient", &pg)?;
            finite("value gradient", &vg)?;
            policy_opt.step(policy.params_mut(), &pg);
            value_opt.step(value.params_mut(), &vg);
            steps += 1;
        }
    }
    let tokens: usize = batch.iter().map(Trajectory::len).sum();
    let kl_total: f64 = batch.iter().map(Trajectory::kl_sum).sum();
    let g = groups as f64;
    Ok(UpdateStats {
        policy_loss: sum.policy_loss / g,
        value_loss: sum.value_loss / g,
        total_loss: sum.total(cfg.value_coef) / g,
        mean_ratio: sum.ratio_sum / sum.tokens.max(1) as f64,
        clip_fraction: sum.clipped as f64 / sum.tokens.max(1) as f64,
        mean_kl: kl_total / tokens.max(1) as f64,
        optimizer_steps: steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn traj(values: Vec<f64>, targets: Vec<f64>) -> Trajectory {
        let n = values.len();
        Trajectory {
            prompt_tokens: vec![0],
            actions: vec![0; n],
            online_logprobs: vec![0.0; n],
            reference_logprobs: vec![0.0; n],
            values,
            kl_terms: vec![0.0; n],
            advantages: vec![0.0; n],
            value_targets: targets,
            terminal_reward: 0.0,
            finished: true,
        }
    }

    #[test]
    fn value_loss_hand_cases() {
        assert_eq!(value_loss(&[traj(vec![1.0, 2.0], vec![1.0, 2.0])]), 0.0);
        assert_eq!(value_loss(&[traj(vec![1.0, 2.0], vec![0.0, 0.0])]), 2.5);
    }

    #[test]
    fn whitening_moments() {
        let mut rows = vec![vec![1.0, 5.0, -2.0], vec![0.5], vec![3.0, 3.0]];
        whiten(&mut rows);
        let flat: Vec<f64> = rows.concat();
        let mean = flat.iter().sum::<f64>() / flat.len() as f64;
        let var = flat.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / flat.len() as f64;
        assert!(mean.abs() < 1e-10);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-6);
        let mut single = vec![vec![4.0]];
        whiten(&mut single);
        assert_eq!(single, vec![vec![4.0]]);
    }

    #[test]
    fn penalty_is_subtracted() {
        let mut t = traj(vec![0.0; 2], vec![0.0; 2]);
        t.advantages = vec![1.0, 2.0];
        t.kl_terms = vec![0.5, -1.0];
        assert_eq!(prepare_advantages(&[t], 0.2, false), vec![vec![0.9, 2.2]]);
    }
}
