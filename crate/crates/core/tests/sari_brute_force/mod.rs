//! Brute-force SARI over explicit n-gram multisets, shared by test targets.

use std::collections::{HashMap, HashSet};

type Bag = HashMap<Vec<String>, f64>;

fn grams(tokens: &[&str], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n)
        .map(|i| tokens[i..i + n].iter().map(|t| t.to_string()).collect())
        .collect()
}

fn bag(items: &[Vec<String>], weight: f64) -> Bag {
    let mut b = Bag::new();
    for g in items {
        *b.entry(g.clone()).or_default() += weight;
    }
    b
}

fn get(b: &Bag, g: &[String]) -> f64 {
    b.get(g).copied().unwrap_or(0.0)
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Direct transcription of the add/keep/delete definitions over explicit
/// n-gram multisets and sets.
pub fn brute_force(source: &[&str], candidate: &[&str], refs: &[Vec<&str>]) -> f64 {
    let k = refs.len() as f64;
    let mut total = 0.0;
    for n in 1..=4 {
        let s = bag(&grams(source, n), k);
        let c = bag(&grams(candidate, n), k);
        let mut r = Bag::new();
        for rf in refs {
            for (g, v) in bag(&grams(rf, n), 1.0) {
                *r.entry(g).or_default() += v;
            }
        }

        // keep
        let kept: Vec<&Vec<String>> = s.keys().filter(|g| get(&c, g) > 0.0).collect();
        let mut p_num = 0.0;
        let mut good_sum = 0.0;
        for g in &kept {
            let kv = get(&s, g).min(get(&c, g));
            let good = kv.min(get(&r, g));
            p_num += good / kv;
            good_sum += good;
        }
        let keep_p = if kept.is_empty() { 1.0 } else { p_num / kept.len() as f64 };
        let all: f64 = s.keys().map(|g| get(&s, g).min(get(&r, g))).sum();
        let keep_r = if s.keys().all(|g| get(&r, g) == 0.0) { 1.0 } else { good_sum / all };

        // delete
        let deleted: Vec<(&Vec<String>, f64)> = s
            .iter()
            .map(|(g, &v)| (g, v - get(&c, g)))
            .filter(|&(_, d)| d > 0.0)
            .collect();
        let del_p = if deleted.is_empty() {
            1.0
        } else {
            deleted
                .iter()
                .map(|&(g, d)| (d - get(&r, g)).max(0.0) / d)
                .sum::<f64>()
                / deleted.len() as f64
        };

        // add
        let s_set: HashSet<&Vec<String>> = s.keys().collect();
        let r_set: HashSet<&Vec<String>> = r.keys().collect();
        let added: HashSet<&Vec<String>> = c.keys().filter(|g| !s_set.contains(g)).collect();
        let added_good = added.iter().filter(|g| r_set.contains(*g)).count() as f64;
        let possible = r_set.iter().filter(|g| !s_set.contains(*g)).count() as f64;
        let add_p = if added.is_empty() { 1.0 } else { added_good / added.len() as f64 };
        let add_r = if possible == 0.0 { 1.0 } else { added_good / possible };

        total += (f1(keep_p, keep_r) + del_p + f1(add_p, add_r)) / 3.0;
    }
    100.0 * total / 4.0
}

pub fn owned(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

pub fn split(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

pub const TRIPLES: [(&str, &str, &[&str]); 3] = [
    (
        "about 95 species are currently accepted .",
        "about 95 you now get in .",
        &["about 95 species are currently known .", "about 95 species are now accepted ."],
    ),
    (
        "the cat sat on the mat and the dog sat too",
        "the cat sat on the mat",
        &["the cat sat on the mat ."],
    ),
    (
        "a b a b c d",
        "a b e a b",
        &["a b e", "b a b c", "e e a"],
    ),
];

/// Library output for the triples above, frozen after agreeing with the
/// brute-force evaluation.
pub const FROZEN: [f64; 3] = [
    26.458333333333332,
    63.333333333333336,
    54.70760233918128,
];
