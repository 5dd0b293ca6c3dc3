//! Token distribution shift: where does a tuned policy's greedy choice sit in
//! the reference policy's ranking at the same context?

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ppo::{greedy_decode, Policy};

pub const DECILES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftCategory {
    /// Reference rank 1.
    Unshifted,
    /// Reference rank 2 or 3.
    Marginal,
    /// Reference rank above 3.
    Shifted,
}

impl ShiftCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ShiftCategory::Unshifted => "unshifted",
            ShiftCategory::Marginal => "marginal",
            ShiftCategory::Shifted => "shifted",
        }
    }
}

/// Token ids by descending score, ties broken by ascending id.
pub fn rank_tokens(scores: &[f64]) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..scores.len() as u32).collect();
    ids.sort_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    });
    ids
}

pub fn classify_token(rl_choice: u32, reference_ranks: &[u32]) -> Result<ShiftCategory> {
    let rank = reference_ranks
        .iter()
        .position(|&t| t == rl_choice)
        .ok_or(Error::TokenOutOfRange {
            id: rl_choice as usize,
            vocab_size: reference_ranks.len(),
        })?
        + 1;
    Ok(match rank {
        1 => ShiftCategory::Unshifted,
        2 | 3 => ShiftCategory::Marginal,
        _ => ShiftCategory::Shifted,
    })
}

/// Token counts in one relative-position decile.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PositionBin {
    pub decile: usize,
    pub tokens: usize,
    pub marginal: usize,
    pub shifted: usize,
}

impl PositionBin {
    pub fn marginal_proportion(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.marginal as f64 / self.tokens as f64
        }
    }

    pub fn shifted_proportion(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.shifted as f64 / self.tokens as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdsReport {
    pub unshifted_count: usize,
    pub marginal_count: usize,
    pub shifted_count: usize,
    /// Unshifted, marginal and shifted shares of all generated tokens.
    pub proportions: [f64; 3],
    pub positional_histogram: Vec<PositionBin>,
}

impl TdsReport {
    pub fn total(&self) -> usize {
        self.unshifted_count + self.marginal_count + self.shifted_count
    }
}

/// Decodes every prompt greedily with `rl_policy` and ranks each emitted
/// token under `sft_policy` given the identical context.
pub fn tds_analyze<P: Policy + ?Sized, Q: Policy + ?Sized>(
    rl_policy: &P,
    sft_policy: &Q,
    prompts: &[Vec<u32>],
    max_new_tokens: usize,
) -> Result<TdsReport> {
    if prompts.is_empty() {
        return Err(Error::InvalidArgument("empty prompt set".into()));
    }
    if rl_policy.vocab_size() != sft_policy.vocab_size() {
        return Err(Error::VocabularyMismatch(format!(
            "{} vs {} tokens",
            rl_policy.vocab_size(),
            sft_policy.vocab_size()
        )));
    }
    let mut counts = [0usize; 3];
    let mut bins: Vec<PositionBin> = (0..DECILES)
        .map(|decile| PositionBin {
            decile,
            ..Default::default()
        })
        .collect();
    for prompt in prompts {
        let decoded = greedy_decode(rl_policy, prompt, max_new_tokens)?;
        let n = decoded.tokens.len();
        let mut context = prompt.clone();
        for (t, &token) in decoded.tokens.iter().enumerate() {
            let ranks = rank_tokens(&sft_policy.logits(&context)?);
            let category = classify_token(token, &ranks)?;
            let bin = &mut bins[(t * DECILES / n).min(DECILES - 1)];
            bin.tokens += 1;
            match category {
                ShiftCategory::Unshifted => counts[0] += 1,
                ShiftCategory::Marginal => {
                    counts[1] += 1;
                    bin.marginal += 1;
                }
                ShiftCategory::Shifted => {
                    counts[2] += 1;
                    bin.shifted += 1;
                }
            }
            context.push(token);
        }
    }
    let total: usize = counts.iter().sum();
    Ok(TdsReport {
        unshifted_count: counts[0],
        marginal_count: counts[1],
        shifted_count: counts[2],
        proportions: counts.map(|c| c as f64 / total as f64),
        positional_histogram: bins,
    })
}
