//! Word accessibility from corpus frequencies.
//!
//! A [`FrequencyModel`] keeps exact counts for the most common types of a
//! reference corpus and falls back to a ridge regression over byte n-gram
//! features for everything else. Scores are natural-log frequencies per
//! billion tokens, so higher means more common.
//!
//! Features are hashed into a fixed number of buckets. Bucket 0 holds the
//! token length in Unicode code points; every byte unigram, bigram and
//! trigram of the UTF-8 encoding adds 1.0 to bucket
//! `1 + fnv1a64([order, bytes..]) % (feature_dim - 1)`. All hashed features
//! carry a positive sign.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::moses_tokenize;
use crate::versioned;

pub const DEFAULT_CAPACITY: usize = 100_000;
pub const DEFAULT_L2: f64 = 1.0;
pub const DEFAULT_FEATURE_DIM: usize = 1 << 18;
const PER_BILLION: f64 = 1e9;
const FILE_KIND: &str = "frequency-model";
const FILE_VERSION: u32 = 1;

/// Sparse feature vector with sorted, unique indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    /// Builds a vector from unsorted `(index, value)` pairs, summing duplicates.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
        for (i, v) in pairs {
            *merged.entry(i).or_insert(0.0) += v;
        }
        let (indices, values) = merged.into_iter().filter(|(_, v)| *v != 0.0).unzip();
        Self { indices, values }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| (i as usize, v))
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }
}

fn fnv1a64(order: u8, bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in std::iter::once(&order).chain(bytes) {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Byte n-grams (orders 1 to 3) of the UTF-8 encoding with their counts.
pub fn byte_ngrams(token: &str) -> BTreeMap<Vec<u8>, usize> {
    let bytes = token.as_bytes();
    let mut grams = BTreeMap::new();
    for order in 1..=3usize {
        for window in bytes.windows(order) {
            *grams.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    grams
}

/// Hashed bucket of a byte n-gram for a feature space of `feature_dim`.
pub fn ngram_bucket(gram: &[u8], feature_dim: usize) -> u32 {
    let buckets = (feature_dim - 1) as u64;
    (1 + fnv1a64(gram.len() as u8, gram) % buckets) as u32
}

/// Feature vector of a token: code-point length plus hashed byte n-gram counts.
pub fn featurize(token: &str, feature_dim: usize) -> Result<SparseVector> {
    if token.is_empty() {
        return Err(Error::EmptyToken);
    }
    if feature_dim < 2 {
        return Err(Error::InvalidArgument(format!(
            "feature_dim must be at least 2, got {feature_dim}"
        )));
    }
    let length = token.chars().count() as f64;
    let grams = byte_ngrams(token);
    let pairs = std::iter::once((0u32, length)).chain(
        grams
            .iter()
            .map(|(g, &c)| (ngram_bucket(g, feature_dim), c as f64)),
    );
    Ok(SparseVector::from_pairs(pairs))
}

/// Linear model over hashed features with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub l2_coefficient: f64,
    pub feature_dim: usize,
}

impl RidgeModel {
    pub fn predict(&self, features: &SparseVector) -> f64 {
        self.intercept + features.dot(&self.weights)
    }

    pub fn predict_token(&self, token: &str) -> Result<f64> {
        Ok(self.predict(&featurize(token, self.feature_dim)?))
    }
}

/// Stopping rule for the conjugate-gradient ridge solver.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative residual `||b - A w|| / ||b||` at which iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 100_000,
        }
    }
}

/// Fits ridge regression on sparse rows.
///
/// Minimizes `sum_i (y_i - b - w.x_i)^2 + l2 * |w|^2` with `b` unpenalized.
/// Columns are implicitly centered and the normal equations are solved with
/// Jacobi-preconditioned conjugate gradients restricted to the columns that
/// carry any nonzero entry; all other weights are exactly zero.
pub fn fit_ridge(
    rows: &[SparseVector],
    targets: &[f64],
    feature_dim: usize,
    l2: f64,
    opts: SolverOptions,
) -> Result<RidgeModel> {
    if rows.len() != targets.len() {
        return Err(Error::LengthMismatch {
            what: "ridge targets",
            expected: rows.len(),
            actual: targets.len(),
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("ridge regression needs at least one row".into()));
    }
    if !(l2 > 0.0 && l2.is_finite()) {
        return Err(Error::InvalidArgument(format!("l2 coefficient must be positive, got {l2}")));
    }
    if let Some(bad) = rows.iter().flat_map(|r| r.indices.iter()).find(|&&i| i as usize >= feature_dim) {
        return Err(Error::InvalidArgument(format!(
            "feature index {bad} outside dimension {feature_dim}"
        )));
    }

    let n = rows.len() as f64;
    let y_mean = targets.iter().sum::<f64>() / n;

    // Compact the active columns.
    let mut slot = vec![u32::MAX; feature_dim];
    let mut active: Vec<u32> = Vec::new();
    for row in rows {
        for &i in &row.indices {
            if slot[i as usize] == u32::MAX {
                slot[i as usize] = active.len() as u32;
                active.push(i);
            }
        }
    }
    let k = active.len();
    let compact: Vec<Vec<(usize, f64)>> = rows
        .iter()
        .map(|r| r.iter().map(|(i, v)| (slot[i] as usize, v)).collect())
        .collect();

    let mut mean = vec![0.0; k];
    let mut diag = vec![l2; k];
    let mut rhs = vec![0.0; k];
    for (row, &y) in compact.iter().zip(targets) {
        for &(j, v) in row {
            mean[j] += v;
            diag[j] += v * v;
            rhs[j] += v * (y - y_mean);
        }
    }
    for j in 0..k {
        mean[j] /= n;
        diag[j] -= n * mean[j] * mean[j];
    }

    let apply = |v: &[f64], out: &mut [f64]| {
        let mu_v: f64 = mean.iter().zip(v).map(|(m, x)| m * x).sum();
        out.iter_mut().zip(v).for_each(|(o, x)| *o = l2 * x);
        for row in &compact {
            let xv: f64 = row.iter().map(|&(j, x)| x * v[j]).sum();
            for &(j, x) in row {
                out[j] += x * xv;
            }
        }
        for (o, m) in out.iter_mut().zip(&mean) {
            *o -= n * m * mu_v;
        }
    };

    let w = conjugate_gradient(apply, &rhs, &diag, opts);

    let mut weights = vec![0.0; feature_dim];
    for (j, &col) in active.iter().enumerate() {
        weights[col as usize] = w[j];
    }
    let intercept = y_mean - mean.iter().zip(&w).map(|(m, x)| m * x).sum::<f64>();
    Ok(RidgeModel {
        weights,
        intercept,
        l2_coefficient: l2,
        feature_dim,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    rhs: &[f64],
    diag: &[f64],
    opts: SolverOptions,
) -> Vec<f64> {
    let k = rhs.len();
    let mut w = vec![0.0; k];
    let b_norm = norm(rhs);
    if k == 0 || b_norm == 0.0 {
        return w;
    }
    let mut ap = vec![0.0; k];
    let mut iterations = 0;
    // Restart from the true residual until it agrees with the recursive one.
    loop {
        apply(&w, &mut ap);
        let mut r: Vec<f64> = rhs.iter().zip(&ap).map(|(b, a)| b - a).collect();
        if norm(&r) <= opts.tolerance * b_norm || iterations >= opts.max_iterations {
            return w;
        }
        let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let start = iterations;
        while iterations < opts.max_iterations {
            apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for j in 0..k {
                w[j] += alpha * p[j];
                r[j] -= alpha * ap[j];
            }
            iterations += 1;
            if norm(&r) <= opts.tolerance * b_norm {
                break;
            }
            for j in 0..k {
                z[j] = r[j] / diag[j];
            }
            let rz_next: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_next / rz;
            rz = rz_next;
            for j in 0..k {
                p[j] = z[j] + beta * p[j];
            }
        }
        if iterations == start {
            return w;
        }
    }
}

/// Natural-log frequency per billion tokens.
pub fn log_frequency_per_billion(count: u64, total_tokens: u64) -> f64 {
    (count as f64 / total_tokens as f64 * PER_BILLION).ln()
}

/// Trains the out-of-vocabulary estimator on `(type, count)` pairs.
pub fn train_ridge(
    types: &[(String, u64)],
    total_tokens: u64,
    l2: f64,
    feature_dim: usize,
) -> Result<RidgeModel> {
    if types.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "ridge training needs at least 2 types, got {}",
            types.len()
        )));
    }
    if total_tokens == 0 {
        return Err(Error::InvalidArgument("total_tokens must be positive".into()));
    }
    let rows = types
        .iter()
        .map(|(t, _)| featurize(t, feature_dim))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<f64> = types
        .iter()
        .map(|(_, c)| log_frequency_per_billion(*c, total_tokens))
        .collect();
    fit_ridge(&rows, &targets, feature_dim, l2, SolverOptions::default())
}

/// Options for [`build_frequency_model`].
#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub capacity: usize,
    pub l2: f64,
    pub feature_dim: usize,
    pub reference_name: String,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_CAPACITY,
            l2: DEFAULT_L2,
            feature_dim: DEFAULT_FEATURE_DIM,
            reference_name: "reference".to_owned(),
        }
    }
}

/// Token type counts of a corpus.
#[derive(Debug, Clone, Default)]
pub struct TypeCounts {
    pub counts: HashMap<String, u64>,
    pub total_tokens: u64,
}

impl TypeCounts {
    pub fn add_line(&mut self, line: &str) {
        for token in moses_tokenize(line) {
            self.total_tokens += 1;
            *self.counts.entry(token).or_insert(0) += 1;
        }
    }

    /// The `capacity` most frequent types, ties broken lexicographically.
    pub fn top_k(&self, capacity: usize) -> Vec<(String, u64)> {
        let mut all: Vec<(String, u64)> = self.counts.iter().map(|(t, &c)| (t.clone(), c)).collect();
        all.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(capacity);
        all
    }
}

/// Exact counts for common types plus a ridge estimator for the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyModel {
    pub reference_name: String,
    pub table: HashMap<String, u64>,
    pub total_tokens: u64,
    pub table_capacity: usize,
    pub ridge: RidgeModel,
}

/// Counts a corpus (one text per item, no deduplication), keeps the top
/// `capacity` types and fits the ridge estimator on them.
pub fn build_frequency_model<I, S>(corpus: I, opts: &BuildOptions) -> Result<FrequencyModel>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    if opts.capacity == 0 {
        return Err(Error::InvalidArgument("capacity must be at least 1".into()));
    }
    let mut counts = TypeCounts::default();
    for line in corpus {
        counts.add_line(line.as_ref());
    }
    FrequencyModel::from_counts(&counts, opts)
}

impl FrequencyModel {
    pub fn from_counts(counts: &TypeCounts, opts: &BuildOptions) -> Result<Self> {
        if counts.total_tokens == 0 {
            return Err(Error::EmptyCorpus);
        }
        let retained = counts.top_k(opts.capacity);
        let ridge = train_ridge(&retained, counts.total_tokens, opts.l2, opts.feature_dim)?;
        Ok(Self {
            reference_name: opts.reference_name.clone(),
            table: retained.into_iter().collect(),
            total_tokens: counts.total_tokens,
            table_capacity: opts.capacity,
            ridge,
        })
    }

    /// Exact score of an in-table type, `None` for anything else.
    pub fn lookup(&self, token: &str) -> Option<f64> {
        self.table
            .get(token)
            .map(|&c| log_frequency_per_billion(c, self.total_tokens))
    }

    /// Natural-log frequency per billion tokens: exact for table entries,
    /// estimated by the ridge model otherwise.
    pub fn word_accessibility(&self, token: &str) -> Result<f64> {
        if token.is_empty() {
            return Err(Error::EmptyToken);
        }
        match self.lookup(token) {
            Some(score) => Ok(score),
            None => self.ridge.predict_token(token),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        versioned::write(path, FILE_KIND, FILE_VERSION, &FrequencyModelFile::from(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: FrequencyModelFile = versioned::read(path, FILE_KIND, FILE_VERSION)?;
        file.into_model(path)
    }
}

#[derive(Serialize, Deserialize)]
struct FrequencyModelFile {
    reference_name: String,
    table_capacity: usize,
    total_tokens: u64,
    l2: f64,
    feature_dim: usize,
    intercept: f64,
    table: Vec<(String, u64)>,
    weights: Vec<(u32, f64)>,
}

impl From<&FrequencyModel> for FrequencyModelFile {
    fn from(m: &FrequencyModel) -> Self {
        let mut table: Vec<(String, u64)> = m.table.iter().map(|(t, &c)| (t.clone(), c)).collect();
        table.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let weights = m
            .ridge
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, &w)| (i as u32, w))
            .collect();
        Self {
            reference_name: m.reference_name.clone(),
            table_capacity: m.table_capacity,
            total_tokens: m.total_tokens,
            l2: m.ridge.l2_coefficient,
            feature_dim: m.ridge.feature_dim,
            intercept: m.ridge.intercept,
            table,
            weights,
        }
    }
}

impl FrequencyModelFile {
    fn into_model(self, path: &Path) -> Result<FrequencyModel> {
        let bad = |reason: String| Error::Format {
            path: path.to_owned(),
            reason,
        };
        if self.table.len() > self.table_capacity {
            return Err(bad("table larger than its capacity".into()));
        }
        if self.total_tokens == 0 || self.feature_dim < 2 {
            return Err(bad("invalid header values".into()));
        }
        let mut weights = vec![0.0; self.feature_dim];
        for (i, w) in self.weights {
            let slot = weights
                .get_mut(i as usize)
                .ok_or_else(|| bad(format!("weight index {i} out of range")))?;
            *slot = w;
        }
        Ok(FrequencyModel {
            reference_name: self.reference_name,
            table: self.table.into_iter().collect(),
            total_tokens: self.total_tokens,
            table_capacity: self.table_capacity,
            ridge: RidgeModel {
                weights,
                intercept: self.intercept,
                l2_coefficient: self.l2,
                feature_dim: self.feature_dim,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn counts_and_capacity() {
        let opts = BuildOptions {
            capacity: 2,
            feature_dim: 64,
            ..Default::default()
        };
        let model = build_frequency_model(["a a a b b c"], &opts).unwrap();
        assert_eq!(model.total_tokens, 6);
        assert_eq!(model.table.len(), 2);
        assert_eq!(model.table["a"], 3);
        assert_eq!(model.table["b"], 2);
        assert_eq!(DEFAULT_CAPACITY, 100_000);
        assert_eq!(DEFAULT_L2, 1.0);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let err = build_frequency_model(Vec::<String>::new(), &BuildOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "empty reference corpus");
        let err = build_frequency_model(["   "], &BuildOptions::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }

    #[test]
    fn ties_at_capacity_break_lexicographically() {
        let opts = BuildOptions {
            capacity: 2,
            feature_dim: 64,
            ..Default::default()
        };
        let model = build_frequency_model(["z y x z y x w"], &opts).unwrap();
        let mut kept: Vec<&str> = model.table.keys().map(String::as_str).collect();
        kept.sort();
        assert_eq!(kept, vec!["x", "y"]);
    }

    #[test]
    fn featurize_unrolls_definition() {
        let grams = byte_ngrams("aa");
        assert_eq!(grams.get(b"a".as_slice()), Some(&2));
        assert_eq!(grams.get(b"aa".as_slice()), Some(&1));
        assert_eq!(grams.len(), 2);
        let f = featurize("aa", DEFAULT_FEATURE_DIM).unwrap();
        assert_eq!(f.indices[0], 0);
        assert_eq!(f.values[0], 2.0);
        assert_eq!(f.values.iter().skip(1).sum::<f64>(), 3.0);
    }

    #[test]
    fn featurize_multibyte() {
        let grams = byte_ngrams("é");
        let unigrams = grams.keys().filter(|g| g.len() == 1).count();
        let bigrams = grams.keys().filter(|g| g.len() == 2).count();
        assert_eq!((unigrams, bigrams, grams.len()), (2, 1, 3));
        let f = featurize("é", DEFAULT_FEATURE_DIM).unwrap();
        assert_eq!(f.values[0], 1.0);
    }

    #[test]
    fn featurize_is_stable() {
        // Frozen buckets guard the hash against accidental changes.
        let f = featurize("big", DEFAULT_FEATURE_DIM).unwrap();
        let g = featurize("big", DEFAULT_FEATURE_DIM).unwrap();
        assert_eq!(f, g);
        assert_eq!(ngram_bucket(b"b", DEFAULT_FEATURE_DIM), ngram_bucket(b"b", DEFAULT_FEATURE_DIM));
        assert_eq!(fnv1a64(1, b"a"), {
            let mut h: u64 = 0xcbf29ce484222325;
            for b in [1u8, b'a'] {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            h
        });
        assert!(featurize("", 16).is_err());
    }

    #[test]
    fn in_table_score_formula() {
        let opts = BuildOptions {
            capacity: 2,
            feature_dim: 64,
            ..Default::default()
        };
        let model = build_frequency_model(["a a a b b c"], &opts).unwrap();
        assert_relative_eq!(model.word_accessibility("a").unwrap(), (5e8f64).ln(), epsilon = 1e-12);
        assert_relative_eq!(model.word_accessibility("a").unwrap(), 20.030_118_656_386_467, epsilon = 1e-9);
        assert!(model.word_accessibility("").is_err());
    }

    #[test]
    fn oov_prediction_is_dot_product() {
        let opts = BuildOptions {
            capacity: 10,
            feature_dim: 128,
            ..Default::default()
        };
        let model = build_frequency_model(["the cat sat on the mat while the dog slept"], &opts).unwrap();
        let token = "colossal";
        let f = featurize(token, 128).unwrap();
        let mut expected = model.ridge.intercept;
        for (i, v) in f.indices.iter().zip(&f.values) {
            expected += model.ridge.weights[*i as usize] * v;
        }
        assert_eq!(model.word_accessibility(token).unwrap(), expected);
    }

    #[test]
    fn zero_features_predict_mean() {
        let rows = vec![SparseVector::default(); 4];
        let y = [1.0, 2.0, 4.0, 9.0];
        let m = fit_ridge(&rows, &y, 8, 1.0, SolverOptions::default()).unwrap();
        assert_eq!(m.intercept, 4.0);
        assert!(m.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn ridge_rejects_bad_inputs() {
        assert!(train_ridge(&[("a".into(), 1)], 10, 1.0, 16).is_err());
        let rows = vec![SparseVector::default(); 2];
        assert!(fit_ridge(&rows, &[1.0, 2.0], 4, 0.0, SolverOptions::default()).is_err());
        assert!(fit_ridge(&rows, &[1.0], 4, 1.0, SolverOptions::default()).is_err());
    }

    #[test]
    fn save_load_reproduces_predictions() {
        let opts = BuildOptions {
            capacity: 5,
            feature_dim: 256,
            reference_name: "fixture".into(),
            ..Default::default()
        };
        let model = build_frequency_model(
            ["the cat sat on the mat .", "a dog chased the cat across the yard ."],
            &opts,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.freq");
        model.save(&path).unwrap();
        let loaded = FrequencyModel::load(&path).unwrap();
        assert_eq!(loaded, model);
        for token in ["the", "cat", "colossal", "yard", "é", "zzz"] {
            assert_eq!(
                loaded.word_accessibility(token).unwrap().to_bits(),
                model.word_accessibility(token).unwrap().to_bits()
            );
        }
    }
}
