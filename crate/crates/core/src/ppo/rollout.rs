use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Policy, PpoConfig, Trajectory};
use crate::error::{Error, Result};

/// `log softmax(logits / temperature)`.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logits.iter().map(|z| (z - max) / temperature).collect();
    let log_norm = scaled.iter().map(|s| s.exp()).sum::<f64>().ln();
    scaled.into_iter().map(|s| s - log_norm).collect()
}

/// Inverse-CDF draw from normalized log-probabilities given `u` in [0, 1).
pub fn sample_token(logprobs: &[f64], u: f64) -> u32 {
    let mut acc = 0.0;
    for (i, lp) in logprobs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i as u32;
        }
    }
    // Rounding left a sliver of mass uncovered; fall back to the last
    // token with non-negligible probability.
    logprobs
        .iter()
        .rposition(|lp| lp.is_finite() && *lp > -700.0)
        .unwrap_or(logprobs.len() - 1) as u32
}

fn argmax(xs: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best as u32
}

/// Stream seed for one trajectory of one training step.
pub fn trajectory_seed(seed: u64, step: u64, index: u64) -> u64 {
    let mut z = seed
        ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xc2b2_ae3d_27d4_eb4f).rotate_left(31);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn check_compatible<P: Policy + ?Sized, Q: Policy + ?Sized>(policy: &P, reference: &Q) -> Result<()> {
    if policy.vocab_size() != reference.vocab_size() || policy.eos_token() != reference.eos_token() {
        return Err(Error::VocabularyMismatch(format!(
            "policy has {} tokens (eos {}), reference has {} (eos {})",
            policy.vocab_size(),
            policy.eos_token(),
            reference.vocab_size(),
            reference.eos_token()
        )));
    }
    Ok(())
}

fn check_prompt<P: Policy + ?Sized>(policy: &P, prompt: &[u32]) -> Result<()> {
    if prompt.len() > policy.max_context() {
        return Err(Error::PromptTooLong {
            len: prompt.len(),
            limit: policy.max_context(),
        });
    }
    if let Some(&bad) = prompt.iter().find(|&&t| t as usize >= policy.vocab_size()) {
        return Err(Error::TokenOutOfRange {
            id: bad as usize,
            vocab_size: policy.vocab_size(),
        });
    }
    Ok(())
}

fn sample_one<P: Policy + ?Sized, Q: Policy + ?Sized>(
    policy: &P,
    reference: &Q,
    prompt: &[u32],
    cfg: &PpoConfig,
    seed: u64,
) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut context = prompt.to_vec();
    let mut actions = Vec::new();
    let mut online = Vec::new();
    let mut reference_lp = Vec::new();
    let mut finished = false;
    while actions.len() < cfg.max_new_tokens {
        let lp = log_softmax(&policy.logits(&context)?, cfg.temperature);
        let action = sample_token(&lp, rng.random::<f64>());
        let ref_lp = log_softmax(&reference.logits(&context)?, cfg.temperature);
        online.push(lp[action as usize]);
        reference_lp.push(ref_lp[action as usize]);
        actions.push(action);
        context.push(action);
        if action == policy.eos_token() {
            finished = true;
            break;
        }
    }
    let n = actions.len();
    let kl_terms = online.iter().zip(&reference_lp).map(|(o, r)| o - r).collect();
    Ok(Trajectory {
        prompt_tokens: prompt.to_vec(),
        actions,
        online_logprobs: online,
        reference_logprobs: reference_lp,
        values: vec![0.0; n],
        kl_terms,
        advantages: vec![0.0; n],
        value_targets: vec![0.0; n],
        terminal_reward: 0.0,
        finished,
    })
}

/// Samples one completion per prompt at `cfg.temperature`. Trajectory `i`
/// draws from its own stream seeded by `trajectory_seed(rng_seed, 0, i)`, so
/// results do not depend on the number of worker threads.
pub fn rollout<P: Policy + ?Sized, Q: Policy + ?Sized>(
    policy: &P,
    reference: &Q,
    prompts: &[Vec<u32>],
    cfg: &PpoConfig,
    rng_seed: u64,
) -> Result<Vec<Trajectory>> {
    if prompts.is_empty() {
        return Err(Error::InvalidArgument("no prompts to roll out".into()));
    }
    check_compatible(policy, reference)?;
    for p in prompts {
        check_prompt(policy, p)?;
    }
    prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| sample_one(policy, reference, p, cfg, trajectory_seed(rng_seed, 0, i as u64)))
        .collect()
}

/// Output of temperature-zero decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub tokens: Vec<u32>,
    pub finished: bool,
}

/// Temperature-zero decoding: always the most probable token, ties to the
/// lowest id.
pub fn greedy_decode<P: Policy + ?Sized>(policy: &P, prompt: &[u32], max_new_tokens: usize) -> Result<Decoded> {
    check_prompt(policy, prompt)?;
    let mut context = prompt.to_vec();
    let mut tokens = Vec::new();
    while tokens.len() < max_new_tokens {
        let next = argmax(&policy.logits(&context)?);
        tokens.push(next);
        context.push(next);
        if next == policy.eos_token() {
            return Ok(Decoded { tokens, finished: true });
        }
    }
    Ok(Decoded {
        tokens,
        finished: false,
    })
}
