//! SARI: n-gram add/keep/delete quality of a simplification against its
//! source and one or more references.
//!
//! Follows the reference implementation with the later corrections that are
//! now standard: keep recall is normalized by the total reference-kept
//! count, and any `0/0` precision or recall counts as 1, so a candidate that
//! matches its reference exactly scores 100 even when some n-gram order is
//! empty. Tokens are lowercased and n-grams run across sentence boundaries.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::tokenizer::TokenizedDocument;

const MAX_ORDER: usize = 4;

type Counter = BTreeMap<String, f64>;

fn ngrams(tokens: &[String], order: usize) -> Vec<String> {
    tokens.windows(order).map(|w| w.join(" ")).collect()
}

fn counter(grams: &[String], scale: f64) -> Counter {
    let mut c = Counter::new();
    for g in grams {
        *c.entry(g.clone()).or_insert(0.0) += scale;
    }
    c
}

fn intersect(a: &Counter, b: &Counter) -> Counter {
    a.iter()
        .filter_map(|(k, &va)| b.get(k).map(|&vb| (k.clone(), va.min(vb))))
        .collect()
}

fn subtract(a: &Counter, b: &Counter) -> Counter {
    a.iter()
        .filter_map(|(k, &va)| {
            let d = va - b.get(k).copied().unwrap_or(0.0);
            (d > 0.0).then(|| (k.clone(), d))
        })
        .collect()
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision > 0.0 || recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Per-order scores: (keep F1, delete precision, add F1), each in [0, 1].
pub fn sari_ngram(source: &[String], candidate: &[String], references: &[Vec<String>]) -> (f64, f64, f64) {
    let num_refs = references.len() as f64;
    let mut reference = Counter::new();
    for r in references {
        for g in r {
            *reference.entry(g.clone()).or_insert(0.0) += 1.0;
        }
    }
    let s_rep = counter(source, num_refs);
    let c_rep = counter(candidate, num_refs);

    let keep = intersect(&s_rep, &c_rep);
    let keep_good = intersect(&keep, &reference);
    let keep_all = intersect(&s_rep, &reference);
    let keep_precision = if keep.is_empty() {
        1.0
    } else {
        keep.iter()
            .map(|(g, v)| keep_good.get(g).copied().unwrap_or(0.0) / v)
            .sum::<f64>()
            / keep.len() as f64
    };
    let keep_recall = if keep_all.is_empty() {
        1.0
    } else {
        keep_good.values().sum::<f64>() / keep_all.values().sum::<f64>()
    };
    let keep_score = f1(keep_precision, keep_recall);

    let deleted = subtract(&s_rep, &c_rep);
    let deleted_good = subtract(&deleted, &reference);
    let delete_precision = if deleted.is_empty() {
        1.0
    } else {
        deleted
            .iter()
            .map(|(g, v)| deleted_good.get(g).copied().unwrap_or(0.0) / v)
            .sum::<f64>()
            / deleted.len() as f64
    };

    let s_set: BTreeSet<&String> = source.iter().collect();
    let c_set: BTreeSet<&String> = candidate.iter().collect();
    let r_set: BTreeSet<&String> = reference.keys().collect();
    let added: BTreeSet<&String> = c_set.difference(&s_set).copied().collect();
    let added_good = added.intersection(&r_set).count() as f64;
    let added_all = r_set.difference(&s_set).count() as f64;
    let add_precision = if added.is_empty() {
        1.0
    } else {
        added_good / added.len() as f64
    };
    let add_recall = if added_all == 0.0 { 1.0 } else { added_good / added_all };
    let add_score = f1(add_precision, add_recall);

    (keep_score, delete_precision, add_score)
}

fn lowered(doc: &TokenizedDocument) -> Vec<String> {
    doc.tokens().map(str::to_lowercase).collect()
}

/// SARI in [0, 100] averaged over n-gram orders 1 to 4.
pub fn sari(
    source: &TokenizedDocument,
    candidate: &TokenizedDocument,
    references: &[TokenizedDocument],
) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::InvalidArgument("SARI needs at least one reference".into()));
    }
    let s = lowered(source);
    let c = lowered(candidate);
    let rs: Vec<Vec<String>> = references.iter().map(lowered).collect();
    Ok(sari_tokens(&s, &c, &rs))
}

/// SARI over pre-tokenized sequences.
pub fn sari_tokens(source: &[String], candidate: &[String], references: &[Vec<String>]) -> f64 {
    let (mut keep, mut delete, mut add) = (0.0, 0.0, 0.0);
    for order in 1..=MAX_ORDER {
        let rgrams: Vec<Vec<String>> = references.iter().map(|r| ngrams(r, order)).collect();
        let (k, d, a) = sari_ngram(&ngrams(source, order), &ngrams(candidate, order), &rgrams);
        keep += k;
        delete += d;
        add += a;
    }
    let n = MAX_ORDER as f64;
    100.0 * (keep / n + delete / n + add / n) / 3.0
}
