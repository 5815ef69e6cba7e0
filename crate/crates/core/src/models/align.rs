//! Hashed-feature logistic regression judging whether a text prefix agrees
//! with a command.
//!
//! Features, each hashed with seeded FNV-1a 64 into `2^dim_log2` buckets:
//! prefix unigrams and bigrams, command content words, command-word ×
//! prefix-token crosses, and command-word × prefix-length crosses (separate
//! buckets for open prefixes and for prefixes ending in EOS). Repeated
//! features count repeatedly.

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab, BOS, EOS, SEP, UNK};
use super::{ModelError, STOPWORDS};
use crate::corpus::PairExample;
use crate::decode::AlignmentDiscriminator;
use crate::rng::{derive_seed, seeded, shuffle};
use crate::tokenize::command_words;

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
/// XORed into the FNV offset basis for every feature hash.
pub const HASH_SEED: u64 = 0x6e6c_6374_726c_0001;
pub const LENGTH_CAP: u64 = 64;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ HASH_SEED;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
enum Kind {
    Unigram = 1,
    Bigram = 2,
    Command = 3,
    Cross = 4,
    OpenLength = 5,
    EndedLength = 6,
}

fn feature_hash(kind: Kind, a: u64, b: u64) -> u64 {
    let mut bytes = [0u8; 17];
    bytes[0] = kind as u8;
    bytes[1..9].copy_from_slice(&a.to_le_bytes());
    bytes[9..].copy_from_slice(&b.to_le_bytes());
    fnv1a(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub dim_log2: u32,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Shuffle example order each epoch (seeded).
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            dim_log2: 18,
            learning_rate: 0.1,
            epochs: 5,
            shuffle: true,
            seed: 0,
        }
    }
}

/// A pair encoded against the model vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignExample {
    pub command: Vec<TokenId>,
    pub prefix: Vec<TokenId>,
    pub y: u8,
}

impl AlignExample {
    pub fn encode(pair: &PairExample, vocab: &Vocab) -> Self {
        AlignExample {
            command: encode_command(&pair.command_text, vocab),
            prefix: vocab.encode(&pair.prefix_tokens),
            y: pair.y,
        }
    }
}

/// Command text as vocabulary ids of its lowercased words.
pub fn encode_command(text: &str, vocab: &Vocab) -> Vec<TokenId> {
    vocab.encode(&command_words(text))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SparseWeights {
    dim_log2: u32,
    bias: f64,
    entries: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AlignSerde {
    config: AlignConfig,
    vocab: Vocab,
    weights: SparseWeights,
    train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "AlignSerde", into = "AlignSerde")]
pub struct AlignmentModel {
    pub config: AlignConfig,
    pub vocab: Vocab,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub train_accuracy: f64,
    token_hash: Vec<u64>,
    content: Vec<bool>,
}

impl From<AlignSerde> for AlignmentModel {
    fn from(s: AlignSerde) -> Self {
        let mut weights = vec![0.0; 1 << s.weights.dim_log2];
        for (i, w) in s.weights.entries {
            weights[i as usize] = w;
        }
        let mut m = AlignmentModel::untrained(s.config, s.vocab);
        m.weights = weights;
        m.bias = s.weights.bias;
        m.train_accuracy = s.train_accuracy;
        m
    }
}

impl From<AlignmentModel> for AlignSerde {
    fn from(m: AlignmentModel) -> Self {
        AlignSerde {
            weights: SparseWeights {
                dim_log2: m.config.dim_log2,
                bias: m.bias,
                entries: m
                    .weights
                    .iter()
                    .enumerate()
                    .filter(|(_, w)| **w != 0.0)
                    .map(|(i, w)| (i as u32, *w))
                    .collect(),
            },
            config: m.config,
            vocab: m.vocab,
            train_accuracy: m.train_accuracy,
        }
    }
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^s) without overflow.
fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

impl AlignmentModel {
    pub fn untrained(config: AlignConfig, vocab: Vocab) -> Self {
        let token_hash = vocab.tokens().iter().map(|t| fnv1a(t.as_bytes())).collect();
        let content = vocab
            .tokens()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let id = i as TokenId;
                ![BOS, EOS, SEP, UNK].contains(&id) && !STOPWORDS.contains(&t.as_str())
            })
            .collect();
        AlignmentModel {
            weights: vec![0.0; 1 << config.dim_log2],
            bias: 0.0,
            train_accuracy: 0.0,
            config,
            vocab,
            token_hash,
            content,
        }
    }

    fn index(&self, kind: Kind, a: u64, b: u64) -> usize {
        (feature_hash(kind, a, b) & ((1u64 << self.config.dim_log2) - 1)) as usize
    }

    /// Hashes of the command's distinct content words, in id order.
    fn content_words(&self, command: &[TokenId]) -> Vec<u64> {
        let mut ids: Vec<TokenId> = command
            .iter()
            .copied()
            .filter(|&t| self.content.get(t as usize).copied().unwrap_or(false))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter()
            .map(|t| self.token_hash[t as usize])
            .collect()
    }

    fn length_features(&self, words: &[u64], prefix: &[TokenId], out: &mut Vec<usize>) {
        let (n, ended) = match prefix.last() {
            Some(&EOS) => (prefix.len() - 1, true),
            _ => (prefix.len(), false),
        };
        let kind = if ended {
            Kind::EndedLength
        } else {
            Kind::OpenLength
        };
        let n = (n as u64).min(LENGTH_CAP);
        for &w in words {
            out.push(self.index(kind, w, n));
        }
    }

    fn token_features(
        &self,
        words: &[u64],
        prev: Option<TokenId>,
        t: TokenId,
        out: &mut Vec<usize>,
    ) {
        let h = self.token_hash[t as usize];
        out.push(self.index(Kind::Unigram, h, 0));
        if let Some(p) = prev {
            out.push(self.index(Kind::Bigram, self.token_hash[p as usize], h));
        }
        for &w in words {
            out.push(self.index(Kind::Cross, w, h));
        }
    }

    /// Active bucket indices, with multiplicity.
    pub fn features(&self, command: &[TokenId], prefix: &[TokenId]) -> Vec<usize> {
        let words = self.content_words(command);
        let mut out = Vec::new();
        for &w in &words {
            out.push(self.index(Kind::Command, w, 0));
        }
        for (i, &t) in prefix.iter().enumerate() {
            self.token_features(&words, i.checked_sub(1).map(|j| prefix[j]), t, &mut out);
        }
        self.length_features(&words, prefix, &mut out);
        out
    }

    pub fn score(&self, command: &[TokenId], prefix: &[TokenId]) -> f64 {
        self.bias
            + self
                .features(command, prefix)
                .iter()
                .map(|&i| self.weights[i])
                .sum::<f64>()
    }

    pub fn predict(&self, command: &[TokenId], prefix: &[TokenId]) -> f64 {
        sigmoid(self.score(command, prefix))
    }

    /// Logistic loss of one example and its gradient as (bucket, value)
    /// pairs (repeated buckets summed) plus the bias gradient.
    pub fn loss_and_gradient(&self, ex: &AlignExample) -> (f64, Vec<(usize, f64)>, f64) {
        let feats = self.features(&ex.command, &ex.prefix);
        let s = self.bias + feats.iter().map(|&i| self.weights[i]).sum::<f64>();
        let y = f64::from(ex.y);
        let loss = softplus(s) - y * s;
        let g = sigmoid(s) - y;
        let mut grad: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
        for i in feats {
            *grad.entry(i).or_insert(0.0) += g;
        }
        (loss, grad.into_iter().collect(), g)
    }

    pub fn loss(&self, ex: &AlignExample) -> f64 {
        let s = self.score(&ex.command, &ex.prefix);
        softplus(s) - f64::from(ex.y) * s
    }

    pub fn accuracy(&self, data: &[AlignExample]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let right = data
            .iter()
            .filter(|e| (self.predict(&e.command, &e.prefix) >= 0.5) == (e.y == 1))
            .count();
        right as f64 / data.len() as f64
    }
}

/// Plain SGD on the logistic loss with step `lr / sqrt(t)`, `t` counting
/// updates from 1 across epochs.
pub fn train_alignment(
    data: &[AlignExample],
    vocab: &Vocab,
    config: AlignConfig,
) -> Result<AlignmentModel, ModelError> {
    if !data.iter().any(|e| e.y == 1) || !data.iter().any(|e| e.y == 0) {
        return Err(ModelError::SingleClassData);
    }
    if config.dim_log2 == 0 || config.dim_log2 > 30 || !(config.learning_rate > 0.0) {
        return Err(ModelError::InvalidHyperparameter(format!("{config:?}")));
    }
    let mut m = AlignmentModel::untrained(config, vocab.clone());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = seeded(derive_seed(config.seed, "align-shuffle"));
    let mut step = 0u64;
    let mut feats = Vec::new();
    for _ in 0..config.epochs {
        if config.shuffle {
            shuffle(&mut order, &mut rng);
        }
        for &i in &order {
            let ex = &data[i];
            step += 1;
            let lr = config.learning_rate / (step as f64).sqrt();
            feats.clear();
            feats.extend(m.features(&ex.command, &ex.prefix));
            let s = m.bias + feats.iter().map(|&f| m.weights[f]).sum::<f64>();
            let g = sigmoid(s) - f64::from(ex.y);
            for &f in &feats {
                m.weights[f] -= lr * g;
            }
            m.bias -= lr * g;
        }
    }
    m.train_accuracy = m.accuracy(data);
    Ok(m)
}

impl AlignmentDiscriminator for AlignmentModel {
    fn align_prob(&self, command: &[TokenId], prefix: &[TokenId]) -> f64 {
        self.predict(command, prefix)
    }

    fn log_prob_extensions(
        &self,
        command: &[TokenId],
        prefix: &[TokenId],
        candidates: &[TokenId],
    ) -> Vec<f64> {
        let words = self.content_words(command);
        let mut base = Vec::new();
        for &w in &words {
            base.push(self.index(Kind::Command, w, 0));
        }
        for (i, &t) in prefix.iter().enumerate() {
            self.token_features(&words, i.checked_sub(1).map(|j| prefix[j]), t, &mut base);
        }
        let s0 = self.bias + base.iter().map(|&i| self.weights[i]).sum::<f64>();
        let mut ext = prefix.to_vec();
        ext.push(0);
        let mut extra = Vec::new();
        candidates
            .iter()
            .map(|&t| {
                *ext.last_mut().unwrap() = t;
                extra.clear();
                self.token_features(&words, prefix.last().copied(), t, &mut extra);
                self.length_features(&words, &ext, &mut extra);
                let s = s0 + extra.iter().map(|&i| self.weights[i]).sum::<f64>();
                // ln sigmoid(s) = -softplus(-s)
                -softplus(-s)
            })
            .collect()
    }
}
