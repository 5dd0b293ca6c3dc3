//! A small synthetic rewriting task with an exactly differentiable policy.
//!
//! Documents are sentences of clauses `filler context synonym` joined by
//! `and`, where each synonym pair has its own context word. Sources use the
//! rare member of every pair in long sentences; targets swap some of them for
//! the common member and turn some connectors into sentence breaks. Every
//! word gets a Zipfian reference frequency so word accessibility can be
//! computed from a sampled corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frequency::{BuildOptions, FrequencyModel, TypeCounts};
use crate::metrics::VoaLexicon;
use crate::ppo::{log_softmax, Policy, PpoConfig, RewardFn, TrainablePolicy, ValueFunction};
use crate::reward::{score_document, RewardBreakdown, RewardConfig};
use crate::tokenizer::{detokenize, TokenizedDocument};

pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";
pub const PERIOD: &str = ".";
pub const CONNECTOR: &str = "and";
pub const DEFAULT_VOCAB_SIZE: usize = 64;
pub const DEFAULT_PAIRS: usize = 8;

/// (rare, common, context). Every rare word is shorter than its common
/// synonym, so character-based readability prefers the rare one.
const PAIRS: [(&str, &str, &str); 12] = [
    ("ire", "anger", "with"),
    ("vex", "bother", "can"),
    ("oft", "often", "so"),
    ("nigh", "nearly", "was"),
    ("ere", "before", "just"),
    ("wan", "pale", "looked"),
    ("rue", "regret", "we"),
    ("ilk", "kind", "their"),
    ("eke", "stretch", "to"),
    ("fain", "gladly", "would"),
    ("wend", "travel", "must"),
    ("mete", "measure", "will"),
];

/// Fillers in decreasing frequency.
const FILLERS: [&str; 60] = [
    "however", "therefore", "perhaps", "indeed", "meanwhile", "moreover", "although", "because", "whenever",
    "besides", "otherwise", "instead", "suddenly", "finally", "usually", "probably", "certainly", "actually",
    "recently", "sometimes", "together", "already", "tomorrow", "yesterday", "tonight", "outside", "upstairs",
    "somewhere", "everyone", "somebody", "nobody", "anyway", "nowhere", "quickly", "slowly", "quietly",
    "clearly", "rarely", "simply", "mostly", "really", "almost", "always", "never", "later", "again", "maybe",
    "still", "today", "abroad", "indoors", "downstairs", "afterwards", "everywhere", "elsewhere", "anyhow",
    "likewise", "nonetheless", "furthermore", "eventually",
];

/// Zipf-Mandelbrot offset: frequencies fall as `1 / (rank + offset)`. The
/// offset keeps contexts, common synonyms and fillers within a narrow
/// accessibility band, so no word is worth dropping for its rank alone.
const RANK_OFFSET: f64 = 300.0;

/// Zipf rank of the rare member of pair `i`.
fn rare_rank(i: usize) -> f64 {
    500_000.0 + 100_000.0 * i as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyVocabulary {
    pub tokens: Vec<String>,
    /// Reference probability of each word; zero for special tokens.
    pub frequencies: Vec<f64>,
    /// (rare, common) token ids.
    pub synonym_pairs: Vec<(u32, u32)>,
    /// Context token preceding each pair.
    pub contexts: Vec<u32>,
    pub fillers: Vec<u32>,
    pub eos: u32,
    pub sep: u32,
    pub period: u32,
    /// Word joining clauses within a sentence.
    pub connector: u32,
}

impl ToyVocabulary {
    /// Builds a vocabulary of exactly `vocab_size` tokens with `pairs`
    /// synonym pairs; the remaining slots are fillers.
    pub fn new(vocab_size: usize, pairs: usize) -> Result<Self> {
        if pairs == 0 || pairs > PAIRS.len() {
            return Err(Error::InvalidArgument(format!("pairs must be in 1..={}", PAIRS.len())));
        }
        let fixed = 4 + 3 * pairs;
        if vocab_size <= fixed || vocab_size - fixed > FILLERS.len() {
            return Err(Error::InvalidArgument(format!(
                "vocab_size must be in {}..={} for {pairs} pairs",
                fixed + 1,
                fixed + FILLERS.len()
            )));
        }
        let n_fillers = vocab_size - fixed;
        let mut tokens: Vec<String> = vec![EOS.into(), SEP.into(), PERIOD.into()];
        let mut ranks = vec![f64::INFINITY; 3];
        let mut push = |t: &str, rank: f64, tokens: &mut Vec<String>| {
            tokens.push(t.to_owned());
            ranks.push(rank);
            (tokens.len() - 1) as u32
        };
        let connector = push(CONNECTOR, 1.0, &mut tokens);
        let fillers: Vec<u32> = FILLERS[..n_fillers]
            .iter()
            .enumerate()
            .map(|(i, f)| push(f, (i + 2) as f64, &mut tokens))
            .collect();
        let contexts: Vec<u32> = PAIRS[..pairs]
            .iter()
            .enumerate()
            .map(|(i, p)| push(p.2, (n_fillers + i + 2) as f64, &mut tokens))
            .collect();
        let commons: Vec<u32> = PAIRS[..pairs]
            .iter()
            .enumerate()
            .map(|(i, p)| push(p.1, (n_fillers + pairs + i + 2) as f64, &mut tokens))
            .collect();
        let rares: Vec<u32> = PAIRS[..pairs]
            .iter()
            .enumerate()
            .map(|(i, p)| push(p.0, rare_rank(i), &mut tokens))
            .collect();
        let weights: Vec<f64> = ranks.iter().map(|r| 1.0 / (r + RANK_OFFSET)).collect();
        let z: f64 = weights.iter().sum();
        Ok(Self {
            tokens,
            frequencies: weights.into_iter().map(|w| w / z).collect(),
            synonym_pairs: rares.into_iter().zip(commons).collect(),
            contexts,
            fillers,
            eos: 0,
            sep: 1,
            period: 2,
            connector,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Result<&str> {
        self.tokens.get(id as usize).map(String::as_str).ok_or(Error::TokenOutOfRange {
            id: id as usize,
            vocab_size: self.tokens.len(),
        })
    }

    pub fn id(&self, token: &str) -> Result<u32> {
        self.tokens
            .iter()
            .position(|t| t == token)
            .map(|i| i as u32)
            .ok_or_else(|| Error::UnknownToken(token.to_owned()))
    }

    /// Splits ids into sentences after each period, stopping at the first
    /// end-of-sequence token.
    pub fn document(&self, ids: &[u32]) -> Result<TokenizedDocument> {
        let mut sentences = vec![Vec::new()];
        for &id in ids {
            if id == self.eos {
                break;
            }
            sentences.last_mut().expect("non-empty").push(self.token(id)?.to_owned());
            if id == self.period {
                sentences.push(Vec::new());
            }
        }
        Ok(TokenizedDocument::from_sentences(sentences))
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let doc = self.document(ids)?;
        let tokens: Vec<&str> = doc.tokens().collect();
        Ok(detokenize(&tokens))
    }

    /// Toy counterpart of a basic-English word list: the connector, the
    /// context words and the common synonyms.
    pub fn basic_vocabulary(&self) -> Result<VoaLexicon> {
        let ids = std::iter::once(self.connector)
            .chain(self.contexts.iter().copied())
            .chain(self.synonym_pairs.iter().map(|&(_, common)| common));
        VoaLexicon::from_words(ids.map(|i| self.tokens[i as usize].as_str()))
    }

    /// Whitespace-separated tokens to ids.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Draws `n_tokens` words from the reference distribution and counts them.
    pub fn reference_counts(&self, n_tokens: u64, seed: u64) -> TypeCounts {
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for f in &self.frequencies {
            acc += f;
            cdf.push(acc);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = vec![0u64; self.len()];
        for _ in 0..n_tokens {
            let u = rng.random::<f64>() * acc;
            let i = cdf.partition_point(|&c| c <= u).min(self.len() - 1);
            hits[i] += 1;
        }
        let mut counts = TypeCounts::default();
        for (t, &c) in self.tokens.iter().zip(&hits) {
            if c > 0 {
                counts.counts.insert(t.clone(), c);
            }
        }
        counts.total_tokens = n_tokens;
        counts
    }

    /// Word accessibility model fitted on a sampled reference corpus.
    pub fn frequency_model(&self, n_tokens: u64, seed: u64) -> Result<FrequencyModel> {
        FrequencyModel::from_counts(&self.reference_counts(n_tokens, seed), &BuildOptions {
            reference_name: format!("toy-zipf-{n_tokens}-{seed}"),
            ..Default::default()
        })
    }
}

/// Parallel source and target documents as token ids, without separator or
/// end-of-sequence tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpus {
    pub sources: Vec<Vec<u32>>,
    pub targets: Vec<Vec<u32>>,
}

impl ToyCorpus {
    /// Each source followed by the separator.
    pub fn prompts(&self, vocab: &ToyVocabulary) -> Vec<Vec<u32>> {
        self.sources
            .iter()
            .map(|s| {
                let mut p = s.clone();
                p.push(vocab.sep);
                p
            })
            .collect()
    }
}

/// Probability that a rare word is swapped for its common synonym in a target.
const SWAP_PROBABILITY: f64 = 0.35;
/// Probability that a target sentence is split between two clauses.
const BREAK_PROBABILITY: f64 = 0.25;

pub fn generate_corpus(vocab: &ToyVocabulary, n_docs: usize, seed: u64) -> Result<ToyCorpus> {
    if n_docs == 0 {
        return Err(Error::InvalidArgument("n_docs must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sources = Vec::with_capacity(n_docs);
    let mut targets = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        // Clauses as (filler, pair index), grouped by source sentence.
        let sentences: Vec<Vec<(u32, usize)>> = (0..rng.random_range(2..=4))
            .map(|_| {
                (0..rng.random_range(2..=4))
                    .map(|_| {
                        let f = vocab.fillers[rng.random_range(0..vocab.fillers.len())];
                        (f, rng.random_range(0..vocab.synonym_pairs.len()))
                    })
                    .collect()
            })
            .collect();
        let n_clauses: usize = sentences.iter().map(Vec::len).sum();
        let mut swap: Vec<bool> = (0..n_clauses).map(|_| rng.random_bool(SWAP_PROBABILITY)).collect();
        if !swap.iter().any(|&s| s) {
            swap[rng.random_range(0..n_clauses)] = true;
        }

        // Connectors that become sentence breaks in the target; at least one
        // per document so targets average fewer tokens per sentence.
        let gaps = n_clauses - sentences.len();
        let mut breaks: Vec<bool> = (0..gaps).map(|_| rng.random_bool(BREAK_PROBABILITY)).collect();
        if !breaks.iter().any(|&b| b) {
            breaks[rng.random_range(0..gaps)] = true;
        }

        let mut source = Vec::new();
        let mut target = Vec::new();
        let (mut k, mut g) = (0, 0);
        for sentence in &sentences {
            for (j, &(filler, pair)) in sentence.iter().enumerate() {
                if j > 0 {
                    source.push(vocab.connector);
                    target.push(if breaks[g] { vocab.period } else { vocab.connector });
                    g += 1;
                }
                let (rare, common) = vocab.synonym_pairs[pair];
                let context = vocab.contexts[pair];
                source.extend([filler, context, rare]);
                target.extend([filler, context, if swap[k] { common } else { rare }]);
                k += 1;
            }
            source.push(vocab.period);
            target.push(vocab.period);
        }
        sources.push(source);
        targets.push(target);
    }
    Ok(ToyCorpus { sources, targets })
}

/// Next-token distribution conditioned on the previous token only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramPolicy {
    pub vocab_size: usize,
    pub eos: u32,
    pub max_context: usize,
    /// Row-major `vocab_size x vocab_size`; row = previous token.
    pub logits: Vec<f64>,
}

impl BigramPolicy {
    pub fn uniform(vocab_size: usize, eos: u32) -> Self {
        Self {
            vocab_size,
            eos,
            max_context: 4096,
            logits: vec![0.0; vocab_size * vocab_size],
        }
    }

    pub fn row(&self, prev: u32) -> Result<&[f64]> {
        let v = self.vocab_size;
        if prev as usize >= v {
            return Err(Error::TokenOutOfRange {
                id: prev as usize,
                vocab_size: v,
            });
        }
        let start = prev as usize * v;
        Ok(&self.logits[start..start + v])
    }

    /// Next-token probabilities at temperature 1.
    pub fn probabilities(&self, prev: u32) -> Result<Vec<f64>> {
        Ok(log_softmax(self.row(prev)?, 1.0).into_iter().map(f64::exp).collect())
    }

    fn check_token(&self, id: u32) -> Result<()> {
        if id as usize >= self.vocab_size {
            return Err(Error::TokenOutOfRange {
                id: id as usize,
                vocab_size: self.vocab_size,
            });
        }
        Ok(())
    }
}

fn last(context: &[u32]) -> Result<u32> {
    context
        .last()
        .copied()
        .ok_or_else(|| Error::InvalidArgument("empty context".into()))
}

impl Policy for BigramPolicy {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_context(&self) -> usize {
        self.max_context
    }

    fn eos_token(&self) -> u32 {
        self.eos
    }

    fn logits(&self, context: &[u32]) -> Result<Vec<f64>> {
        Ok(self.row(last(context)?)?.to_vec())
    }
}

impl TrainablePolicy for BigramPolicy {
    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn accumulate_log_prob_grad(
        &self,
        context: &[u32],
        action: u32,
        temperature: f64,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let prev = last(context)?;
        self.check_token(action)?;
        let lp = log_softmax(self.row(prev)?, temperature);
        let start = prev as usize * self.vocab_size;
        for (j, l) in lp.iter().enumerate() {
            let indicator = if j == action as usize { 1.0 } else { 0.0 };
            grad[start + j] += scale * (indicator - l.exp()) / temperature;
        }
        Ok(())
    }
}

/// Gradient of `log softmax(row)[action]` with respect to the logits of row
/// `prev`: `one_hot(action) - softmax(row)`. All other rows have zero
/// gradient.
pub fn policy_grad_logprob(policy: &BigramPolicy, prev: u32, action: u32) -> Result<Vec<f64>> {
    policy.check_token(action)?;
    let lp = log_softmax(policy.row(prev)?, 1.0);
    Ok(lp
        .iter()
        .enumerate()
        .map(|(j, l)| if j == action as usize { 1.0 } else { 0.0 } - l.exp())
        .collect())
}

/// Exact `KL(p(. | prev) || q(. | prev))` at the given temperature.
pub fn row_kl(p: &BigramPolicy, q: &BigramPolicy, prev: u32, temperature: f64) -> Result<f64> {
    if p.vocab_size != q.vocab_size {
        return Err(Error::VocabularyMismatch(format!("{} vs {} tokens", p.vocab_size, q.vocab_size)));
    }
    let lp = log_softmax(p.row(prev)?, temperature);
    let lq = log_softmax(q.row(prev)?, temperature);
    Ok(lp.iter().zip(&lq).map(|(a, b)| a.exp() * (a - b)).sum())
}

/// Add-one smoothed maximum-likelihood bigram fit over
/// `[sep] + document + [eos]` sequences, stored as log-probabilities.
pub fn fit_sft(corpus: &[Vec<u32>], vocab: &ToyVocabulary) -> Result<BigramPolicy> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let v = vocab.len();
    let mut counts = vec![0.0f64; v * v];
    for doc in corpus {
        let seq: Vec<u32> = std::iter::once(vocab.sep).chain(doc.iter().copied()).chain([vocab.eos]).collect();
        for w in seq.windows(2) {
            for &t in w {
                if t as usize >= v {
                    return Err(Error::TokenOutOfRange { id: t as usize, vocab_size: v });
                }
            }
            counts[w[0] as usize * v + w[1] as usize] += 1.0;
        }
    }
    let mut logits = vec![0.0; v * v];
    for r in 0..v {
        let row = &counts[r * v..(r + 1) * v];
        let total: f64 = row.iter().sum::<f64>() + v as f64;
        for c in 0..v {
            logits[r * v + c] = ((row[c] + 1.0) / total).ln();
        }
    }
    Ok(BigramPolicy {
        vocab_size: v,
        eos: vocab.eos,
        max_context: 4096,
        logits,
    })
}

/// State value indexed by the most recent token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularValue {
    pub values: Vec<f64>,
}

impl TabularValue {
    pub fn zeros(vocab_size: usize) -> Self {
        Self {
            values: vec![0.0; vocab_size],
        }
    }

    fn index(&self, context: &[u32]) -> Result<usize> {
        let t = last(context)? as usize;
        if t >= self.values.len() {
            return Err(Error::TokenOutOfRange {
                id: t,
                vocab_size: self.values.len(),
            });
        }
        Ok(t)
    }
}

impl ValueFunction for TabularValue {
    fn value(&self, context: &[u32]) -> Result<f64> {
        Ok(self.values[self.index(context)?])
    }

    fn params(&self) -> &[f64] {
        &self.values
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn accumulate_value_grad(&self, context: &[u32], scale: f64, grad: &mut [f64]) -> Result<()> {
        grad[self.index(context)?] += scale;
        Ok(())
    }
}

/// Scores generated ids by decoding them against the toy vocabulary.
#[derive(Debug, Clone)]
pub struct ToyReward {
    pub vocab: ToyVocabulary,
    pub model: FrequencyModel,
    pub cfg: RewardConfig,
}

impl ToyReward {
    pub fn breakdown(&self, actions: &[u32], finished: bool) -> RewardBreakdown {
        match self.vocab.document(actions) {
            Ok(doc) => score_document(&doc, finished, &self.model, &self.cfg),
            Err(_) => score_document(&TokenizedDocument::from_sentences(vec![]), finished, &self.model, &self.cfg),
        }
    }
}

impl RewardFn for ToyReward {
    fn score(&self, _prompt: &[u32], actions: &[u32], finished: bool) -> RewardBreakdown {
        self.breakdown(actions, finished)
    }
}

/// Settings for the toy task that differ from the large-model defaults: the
/// tabular policy tolerates a much larger step size and outputs are short.
pub fn toy_ppo_config() -> PpoConfig {
    PpoConfig {
        learning_rate: 1e-2,
        value_learning_rate: 0.1,
        max_new_tokens: 64,
        ..Default::default()
    }
}

/// Size of the sampled reference corpus for the toy frequency model.
pub const REFERENCE_TOKENS: u64 = 10_000_000;

/// Everything needed to train and evaluate on the toy task.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub vocab: ToyVocabulary,
    pub train: ToyCorpus,
    pub held_out: ToyCorpus,
    pub sft: BigramPolicy,
    pub model: FrequencyModel,
}

impl ToyTask {
    /// Training and held-out corpora come from disjoint seed streams.
    pub fn build(vocab_size: usize, pairs: usize, n_docs: usize, seed: u64) -> Result<Self> {
        let vocab = ToyVocabulary::new(vocab_size, pairs)?;
        let train = generate_corpus(&vocab, n_docs, seed)?;
        let held_out = generate_corpus(&vocab, n_docs.div_ceil(4), seed ^ 0x005e_ed0f_f5e7)?;
        let sft = fit_sft(&train.targets, &vocab)?;
        let model = vocab.frequency_model(REFERENCE_TOKENS, seed.wrapping_add(1))?;
        Ok(Self {
            vocab,
            train,
            held_out,
            sft,
            model,
        })
    }
}
