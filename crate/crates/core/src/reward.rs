//! Terminal reward for a finished generation.
//!
//! The accessibility objective balances mean clamped word accessibility
//! against negated mean sentence length. The ARI objective rewards the
//! negated readability grade instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::FrequencyModel;
use crate::metrics::{self, mean};
use crate::tokenizer::{tokenize, word_tokens, TokenizedDocument};

/// Sentence-length weights explored in increasing order.
pub const BETA_SL_GRID: [f64; 4] = [0.05, 0.08, 0.1, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Accessibility,
    /// Negated Automated Readability Index.
    Ari,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub beta_wa: f64,
    pub beta_sl: f64,
    pub wa_floor: f64,
    pub unfinished_penalty: f64,
    pub eos_token_id: u32,
    pub objective: Objective,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            beta_wa: 4.0,
            beta_sl: 0.1,
            wa_floor: 10.0,
            unfinished_penalty: -10.0,
            eos_token_id: 0,
            objective: Objective::Accessibility,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| {
            Err(Error::InvalidConfig {
                field,
                reason: reason.to_owned(),
            })
        };
        if !(self.beta_wa >= 0.0 && self.beta_wa.is_finite()) {
            return bad("beta_wa", "must be finite and non-negative");
        }
        if !(self.beta_sl >= 0.0 && self.beta_sl.is_finite()) {
            return bad("beta_sl", "must be finite and non-negative");
        }
        if !self.wa_floor.is_finite() {
            return bad("wa_floor", "must be finite");
        }
        if !(self.unfinished_penalty < 0.0 && self.unfinished_penalty.is_finite()) {
            return bad("unfinished_penalty", "must be finite and negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub wa_component: f64,
    pub sl_component: f64,
    pub total: f64,
    pub finished: bool,
    /// Spread of per-sentence word accessibility, when measurable.
    pub sentence_wa_std: Option<f64>,
}

impl RewardBreakdown {
    fn penalized(cfg: &RewardConfig, finished: bool) -> Self {
        Self {
            wa_component: 0.0,
            sl_component: 0.0,
            total: cfg.unfinished_penalty,
            finished,
            sentence_wa_std: None,
        }
    }
}

/// Tokenizes `generated_text` and scores it with [`score_document`].
pub fn terminal_reward(
    generated_text: &str,
    finished: bool,
    model: &FrequencyModel,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    score_document(&tokenize(generated_text), finished, model, cfg)
}

/// Scores an already tokenized generation. Unfinished generations and
/// generations without any word token get the fixed penalty.
pub fn score_document(
    doc: &TokenizedDocument,
    finished: bool,
    model: &FrequencyModel,
    cfg: &RewardConfig,
) -> RewardBreakdown {
    if !finished {
        return RewardBreakdown::penalized(cfg, false);
    }
    match components(doc, model, cfg) {
        Ok(b) => b,
        Err(_) => RewardBreakdown::penalized(cfg, true),
    }
}

fn components(doc: &TokenizedDocument, model: &FrequencyModel, cfg: &RewardConfig) -> Result<RewardBreakdown> {
    let words = word_tokens(doc);
    if words.is_empty() || doc.sentence_count == 0 {
        return Err(Error::Unmeasurable("no words"));
    }
    let clamped = words
        .iter()
        .map(|w| Ok((model.word_accessibility(w)? - cfg.wa_floor).max(0.0)))
        .collect::<Result<Vec<f64>>>()?;
    let wa_component = mean(&clamped);
    let sl_component = -(doc.token_count as f64 / doc.sentence_count as f64);
    let total = match cfg.objective {
        Objective::Accessibility => cfg.beta_wa * wa_component + cfg.beta_sl * sl_component,
        Objective::Ari => -metrics::ari(doc)?,
    };
    if !total.is_finite() {
        return Err(Error::NonFinite("reward".into()));
    }
    let spread = metrics::population_std(&metrics::sentence_accessibility(doc, model)?);
    Ok(RewardBreakdown {
        wa_component,
        sl_component,
        total,
        finished: true,
        sentence_wa_std: Some(spread),
    })
}
