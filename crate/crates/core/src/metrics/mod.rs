//! Document-level readability and accessibility metrics.

mod readability;
mod sari;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use readability::{ari, count_syllables, flesch_kincaid, letter_count};
pub use sari::{sari, sari_ngram, sari_tokens};

use crate::error::{Error, Result};
use crate::frequency::FrequencyModel;
use crate::tokenizer::{is_word_token, word_tokens, TokenizedDocument};

/// Standard deviation of sentence-level word accessibility above which
/// readability-deflating trailers tend to be accumulating.
pub const INSTABILITY_THRESHOLD: f64 = 0.6;

/// A basic-vocabulary word list (VOA Special English or similar).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoaLexicon {
    words: HashSet<String>,
}

impl VoaLexicon {
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let words: HashSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        if words.is_empty() {
            return Err(Error::InvalidArgument("empty lexicon".into()));
        }
        Ok(Self { words })
    }

    /// Loads a one-word-per-line UTF-8 file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_words(text.lines().filter(|l| !l.starts_with('#')))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// `ln((in + 0.5) / (out + 0.5))` over lowercased word tokens.
pub fn voa_log_ratio(doc: &TokenizedDocument, lexicon: &VoaLexicon) -> Result<f64> {
    let words = word_tokens(doc);
    if words.is_empty() {
        return Err(Error::Unmeasurable("no words"));
    }
    let inside = words.iter().filter(|w| lexicon.contains(w)).count();
    Ok(smoothed_log_ratio(inside, words.len() - inside))
}

pub fn smoothed_log_ratio(inside: usize, outside: usize) -> f64 {
    ((inside as f64 + 0.5) / (outside as f64 + 0.5)).ln()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn population_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccessibilityAggregates {
    /// Mean word accessibility over word tokens.
    pub avg_wa: f64,
    /// Mean letters-and-digits per word token.
    pub avg_wl: f64,
    /// Mean tokens (punctuation included) per sentence.
    pub avg_sl: f64,
    /// Population std across sentences of each sentence's mean WA.
    pub sentence_wa_std: f64,
}

/// Per-sentence mean word accessibility; sentences without words are skipped.
pub fn sentence_accessibility(doc: &TokenizedDocument, model: &FrequencyModel) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(doc.sentence_count);
    for sentence in &doc.sentences {
        let scores = sentence
            .iter()
            .filter(|t| is_word_token(t))
            .map(|t| model.word_accessibility(t))
            .collect::<Result<Vec<f64>>>()?;
        if !scores.is_empty() {
            out.push(mean(&scores));
        }
    }
    Ok(out)
}

/// Computes WA, WL, SL and the sentence-level WA spread of a document.
pub fn accessibility_aggregates(
    doc: &TokenizedDocument,
    model: &FrequencyModel,
) -> Result<AccessibilityAggregates> {
    let words = word_tokens(doc);
    if doc.sentence_count == 0 || words.is_empty() {
        return Err(Error::Unmeasurable("no words or no sentences"));
    }
    let wa = words
        .iter()
        .map(|w| model.word_accessibility(w))
        .collect::<Result<Vec<f64>>>()?;
    let wl: Vec<f64> = words.iter().map(|w| letter_count(w) as f64).collect();
    Ok(AccessibilityAggregates {
        avg_wa: mean(&wa),
        avg_wl: mean(&wl),
        avg_sl: doc.token_count as f64 / doc.sentence_count as f64,
        sentence_wa_std: population_std(&sentence_accessibility(doc, model)?),
    })
}

/// All document metrics side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ari: f64,
    pub fk: f64,
    pub sari: Option<f64>,
    pub voa_log_ratio: f64,
    pub avg_sentence_length: f64,
    pub avg_word_accessibility: f64,
    pub avg_word_length: f64,
    pub sentence_wa_std: f64,
}

/// Source and references for scoring SARI alongside the other metrics.
pub struct SariContext<'a> {
    pub source: &'a TokenizedDocument,
    pub references: &'a [TokenizedDocument],
}

pub fn measure(
    doc: &TokenizedDocument,
    model: &FrequencyModel,
    lexicon: &VoaLexicon,
    sari_context: Option<SariContext<'_>>,
) -> Result<MetricReport> {
    let agg = accessibility_aggregates(doc, model)?;
    let sari = match sari_context {
        Some(ctx) => Some(sari(ctx.source, doc, ctx.references)?),
        None => None,
    };
    Ok(MetricReport {
        ari: ari(doc)?,
        fk: flesch_kincaid(doc)?,
        sari,
        voa_log_ratio: voa_log_ratio(doc, lexicon)?,
        avg_sentence_length: agg.avg_sl,
        avg_word_accessibility: agg.avg_wa,
        avg_word_length: agg.avg_wl,
        sentence_wa_std: agg.sentence_wa_std,
    })
}
