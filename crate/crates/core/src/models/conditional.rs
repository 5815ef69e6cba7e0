//! Command-conditioned n-gram LM.
//!
//! The context is `command · SEP · text`. A text n-gram (which never looks
//! past SEP) is multiplied, as a product of experts, by one trigger expert
//! per command content word `w`:
//!
//! - a token `t` other than EOS is scaled by
//!   `P(t | w) / P(t) · (1 − h(w, i)) / (1 − h0(i))`, with `P(t | w)`
//!   smoothed toward `P(t)` so tokens never seen with `w` are damped
//! - EOS is scaled by `h(w, i) / h0(i)`
//!
//! where `i` is the current text length, `h0(i)` is the chance a text of
//! length at least `i` stops at `i`, and `h(w, i)` is the same for texts
//! whose command contains `w`, shrunk toward `h0(i)`. Without a SEP in the
//! context the model is the plain n-gram.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ngram::{train_ngram, NGramLm};
use super::vocab::{TokenId, Vocab, BOS, EOS, SEP, UNK};
use super::{ModelError, STOPWORDS};
use crate::decode::LmScorer;

/// Positions at or above this share one hazard bucket.
pub const HAZARD_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalConfig {
    pub order: usize,
    pub alpha: f64,
    /// Additive smoothing of the global token distribution.
    pub trigger_alpha: f64,
    /// Pseudo-count pulling `P(t | w)` toward the global `P(t)`.
    pub trigger_prior: f64,
    /// Pseudo-count pulling `h(w, i)` toward `h0(i)`.
    pub hazard_prior: f64,
    /// Exponent on each trigger expert.
    pub beta: f64,
}

impl Default for ConditionalConfig {
    fn default() -> Self {
        ConditionalConfig {
            order: 3,
            alpha: 0.1,
            trigger_alpha: 0.1,
            trigger_prior: 50.0,
            hazard_prior: 5.0,
            beta: 1.0,
        }
    }
}

/// Token and stopping counts for texts under one command word (or all).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerCounts {
    pub tokens: BTreeMap<TokenId, u64>,
    pub total: u64,
    /// `stops[i]`: texts of length exactly `i` (capped).
    pub stops: Vec<u64>,
    /// `at_risk[i]`: texts of length at least `i` (capped).
    pub at_risk: Vec<u64>,
}

impl TriggerCounts {
    fn add(&mut self, text: &[TokenId]) {
        for &t in text {
            *self.tokens.entry(t).or_insert(0) += 1;
        }
        self.total += text.len() as u64;
        if self.stops.is_empty() {
            self.stops = vec![0; HAZARD_CAP + 1];
            self.at_risk = vec![0; HAZARD_CAP + 1];
        }
        let n = text.len().min(HAZARD_CAP);
        self.stops[n] += 1;
        for r in &mut self.at_risk[..=n] {
            *r += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalLm {
    pub config: ConditionalConfig,
    pub lm: NGramLm,
    pub global: TriggerCounts,
    pub triggers: BTreeMap<TokenId, TriggerCounts>,
}

/// Split a context at its last SEP into (command, text).
pub fn split_context(context: &[TokenId]) -> Option<(&[TokenId], &[TokenId])> {
    let sep = context.iter().rposition(|&t| t == SEP)?;
    Some((&context[..sep], &context[sep + 1..]))
}

fn is_content(vocab: &Vocab, t: TokenId) -> bool {
    ![BOS, EOS, SEP, UNK].contains(&t) && !STOPWORDS.contains(&vocab.token(t))
}

/// Train on `(command tokens, text tokens)` pairs sharing one vocabulary.
pub fn train_conditional(
    data: &[(Vec<TokenId>, Vec<TokenId>)],
    vocab: &Vocab,
    config: ConditionalConfig,
) -> Result<ConditionalLm, ModelError> {
    let texts: Vec<Vec<TokenId>> = data.iter().map(|(_, t)| t.clone()).collect();
    let lm = train_ngram(&texts, vocab, config.order, config.alpha)?;
    train_conditional_on(data, lm, config)
}

/// Like [`train_conditional`] but with a text LM trained elsewhere, e.g. on
/// more texts than have commands.
pub fn train_conditional_on(
    data: &[(Vec<TokenId>, Vec<TokenId>)],
    lm: NGramLm,
    config: ConditionalConfig,
) -> Result<ConditionalLm, ModelError> {
    if !(config.trigger_alpha > 0.0
        && config.trigger_prior > 0.0
        && config.hazard_prior >= 0.0
        && config.beta >= 0.0)
    {
        return Err(ModelError::InvalidHyperparameter(format!("{config:?}")));
    }
    if data.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let vocab = &lm.vocab;
    let mut global = TriggerCounts::default();
    let mut triggers: BTreeMap<TokenId, TriggerCounts> = BTreeMap::new();
    for (command, text) in data {
        global.add(text);
        let mut words: Vec<TokenId> = command
            .iter()
            .copied()
            .filter(|&w| is_content(vocab, w))
            .collect();
        words.sort_unstable();
        words.dedup();
        for w in words {
            triggers.entry(w).or_default().add(text);
        }
    }
    Ok(ConditionalLm {
        config,
        lm,
        global,
        triggers,
    })
}

impl ConditionalLm {
    fn global_prob(&self, t: TokenId) -> f64 {
        let a = self.config.trigger_alpha;
        let n = self.global.tokens.get(&t).copied().unwrap_or(0) as f64;
        (n + a) / (self.global.total as f64 + a * self.lm.vocab.len() as f64)
    }

    /// `P(t | w) / P(t)` with `P(t | w)` smoothed toward `P(t)`.
    fn token_ratio(&self, c: &TriggerCounts, t: TokenId) -> f64 {
        let m = self.config.trigger_prior;
        let p = self.global_prob(t);
        let n = c.tokens.get(&t).copied().unwrap_or(0) as f64;
        (n + m * p) / ((c.total as f64 + m) * p)
    }

    fn global_hazard(&self, i: usize) -> f64 {
        let i = i.min(HAZARD_CAP);
        let s = self.global.stops[i] as f64;
        let r = self.global.at_risk[i] as f64;
        (s + 0.5) / (r + 1.0)
    }

    fn hazard(&self, c: &TriggerCounts, i: usize, h0: f64) -> f64 {
        let i = i.min(HAZARD_CAP);
        let m = self.config.hazard_prior;
        let h = (c.stops[i] as f64 + m * h0) / (c.at_risk[i] as f64 + m);
        h.clamp(1e-6, 1.0 - 1e-6)
    }
}

impl LmScorer for ConditionalLm {
    fn vocab_size(&self) -> usize {
        self.lm.vocab.len()
    }

    fn eos(&self) -> TokenId {
        EOS
    }

    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let mut dist = self.lm.next_distribution(context);
        let Some((command, text)) = split_context(context) else {
            return dist;
        };
        if self.global.stops.is_empty() || self.config.beta == 0.0 {
            return dist;
        }
        let mut words: Vec<TokenId> = command.to_vec();
        words.sort_unstable();
        words.dedup();
        let i = text.len();
        let h0 = self.global_hazard(i);
        let mut log_scale = vec![0.0; dist.len()];
        for w in words {
            let Some(c) = self.triggers.get(&w) else {
                continue;
            };
            let h = self.hazard(c, i, h0);
            let go = ((1.0 - h) / (1.0 - h0)).ln();
            for (t, s) in log_scale.iter_mut().enumerate() {
                let t = t as TokenId;
                *s += if t == EOS {
                    (h / h0).ln()
                } else {
                    self.token_ratio(c, t).ln() + go
                };
            }
        }
        let beta = self.config.beta;
        let max = log_scale.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (p, s) in dist.iter_mut().zip(&log_scale) {
            *p *= (beta * (s - max)).exp();
        }
        let z: f64 = dist.iter().sum();
        for p in &mut dist {
            *p /= z;
        }
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn toy() -> (Vocab, Vec<(Vec<TokenId>, Vec<TokenId>)>) {
        let vocab = Vocab::build(["write", "red", "blue", "short", "long", "r", "b", "q"]);
        let mut rng = seeded(3);
        let mut data = Vec::new();
        for _ in 0..600 {
            let red = rng.gen_bool(0.5);
            let short = rng.gen_bool(0.5);
            let len = if short {
                rng.gen_range(2..4)
            } else {
                rng.gen_range(8..12)
            };
            let text: Vec<TokenId> = (0..len)
                .map(|_| {
                    let tok = if rng.gen_bool(0.7) {
                        if red {
                            "r"
                        } else {
                            "b"
                        }
                    } else {
                        "q"
                    };
                    vocab.id(tok)
                })
                .collect();
            let cmd = vocab.encode(&[
                "write",
                if red { "red" } else { "blue" },
                if short { "short" } else { "long" },
            ]);
            data.push((cmd, text));
        }
        (vocab, data)
    }

    #[test]
    fn distributions_normalize_and_fall_back() {
        let (vocab, data) = toy();
        let m = train_conditional(&data, &vocab, ConditionalConfig::default()).unwrap();
        let mut ctx = vocab.encode(&["write", "red", "long", "<sep>", "r", "q"]);
        let d = m.next_distribution(&ctx);
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.iter().all(|&p| p > 0.0));
        ctx.retain(|&t| t != SEP);
        assert_eq!(m.next_distribution(&ctx), m.lm.next_distribution(&ctx));
    }

    #[test]
    fn command_words_steer_topic_and_stop() {
        let (vocab, data) = toy();
        let m = train_conditional(&data, &vocab, ConditionalConfig::default()).unwrap();
        let (r, b) = (vocab.id("r"), vocab.id("b"));
        let red = m.next_distribution(&vocab.encode(&["write", "red", "short", "<sep>"]));
        let blue = m.next_distribution(&vocab.encode(&["write", "blue", "short", "<sep>"]));
        assert!(red[r as usize] > red[b as usize] && blue[b as usize] > blue[r as usize]);
        let prefix = ["write", "red", "short", "<sep>", "r", "r", "r"];
        let short = m.next_distribution(&vocab.encode(&prefix));
        let mut long_prefix = prefix;
        long_prefix[2] = "long";
        let long = m.next_distribution(&vocab.encode(&long_prefix));
        assert!(short[EOS as usize] > 5.0 * long[EOS as usize]);
    }
}
