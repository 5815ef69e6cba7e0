use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, Vocab, BOS, EOS, SEP};
use super::ModelError;
use crate::decode::LmScorer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextCounts {
    pub total: u64,
    pub next: BTreeMap<TokenId, u64>,
}

/// Additively smoothed n-gram model:
/// `P(t | ctx) = (count(ctx·t) + alpha) / (count(ctx) + alpha·|V|)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGramLm {
    pub order: usize,
    pub alpha: f64,
    pub vocab: Vocab,
    #[serde(with = "super::map_pairs")]
    pub counts: BTreeMap<Vec<TokenId>, ContextCounts>,
}

/// The last `n - 1` tokens of BOS-padded `context`. SEP starts a new
/// segment, so nothing before the last SEP is visible.
fn context_key(order: usize, context: &[TokenId]) -> Vec<TokenId> {
    let context = match context.iter().rposition(|&t| t == SEP) {
        Some(i) => &context[i + 1..],
        None => context,
    };
    let n = order - 1;
    let mut key = vec![BOS; n.saturating_sub(context.len())];
    key.extend_from_slice(&context[context.len().saturating_sub(n)..]);
    key
}

pub fn train_ngram(
    corpus: &[Vec<TokenId>],
    vocab: &Vocab,
    order: usize,
    alpha: f64,
) -> Result<NGramLm, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    if order == 0 || !(alpha > 0.0 && alpha.is_finite()) {
        return Err(ModelError::InvalidHyperparameter(format!(
            "order {order}, alpha {alpha}"
        )));
    }
    let mut counts: BTreeMap<Vec<TokenId>, ContextCounts> = BTreeMap::new();
    for seq in corpus {
        for j in 0..=seq.len() {
            let next = seq.get(j).copied().unwrap_or(EOS);
            let entry = counts
                .entry(context_key(order, &seq[..j]))
                .or_insert(ContextCounts {
                    total: 0,
                    next: BTreeMap::new(),
                });
            entry.total += 1;
            *entry.next.entry(next).or_insert(0) += 1;
        }
    }
    Ok(NGramLm {
        order,
        alpha,
        vocab: vocab.clone(),
        counts,
    })
}

impl NGramLm {
    fn denominator(&self, c: Option<&ContextCounts>) -> f64 {
        c.map_or(0.0, |c| c.total as f64) + self.alpha * self.vocab.len() as f64
    }
}

impl LmScorer for NGramLm {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn eos(&self) -> TokenId {
        EOS
    }

    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let c = self.counts.get(&context_key(self.order, context));
        let denom = self.denominator(c);
        let mut dist = vec![self.alpha / denom; self.vocab.len()];
        if let Some(c) = c {
            for (&t, &n) in &c.next {
                dist[t as usize] = (n as f64 + self.alpha) / denom;
            }
        }
        dist
    }

    fn prob(&self, context: &[TokenId], token: TokenId) -> f64 {
        let c = self.counts.get(&context_key(self.order, context));
        let n = c.and_then(|c| c.next.get(&token)).copied().unwrap_or(0);
        (n as f64 + self.alpha) / self.denominator(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    fn encode(v: &Vocab, s: &str) -> Vec<TokenId> {
        v.encode(&s.split_whitespace().collect::<Vec<_>>())
    }

    #[test]
    fn single_continuation_dominates() {
        let v = Vocab::build(["a", "b"]);
        let corpus = vec![encode(&v, "a b"), encode(&v, "a b")];
        let lm = train_ngram(&corpus, &v, 2, 1e-9).unwrap();
        assert!(lm.prob(&encode(&v, "a"), v.id("b")) > 1.0 - 1e-8);
        assert_eq!(lm.vocab.id("zzz"), crate::models::vocab::UNK);
    }

    #[test]
    fn distributions_normalize() {
        let v = Vocab::build(["a", "b", "c", "d"]);
        let corpus: Vec<Vec<TokenId>> = ["a b c", "d a", "c c c b", "a"]
            .iter()
            .map(|s| encode(&v, s))
            .collect();
        for order in 1..=3 {
            let lm = train_ngram(&corpus, &v, order, 0.1).unwrap();
            let mut rng = seeded(order as u64);
            for _ in 0..100 {
                let len = rng.gen_range(0..5);
                let ctx: Vec<TokenId> = (0..len)
                    .map(|_| rng.gen_range(0..v.len() as TokenId))
                    .collect();
                let d = lm.next_distribution(&ctx);
                assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let t = rng.gen_range(0..v.len() as TokenId);
                assert_eq!(d[t as usize], lm.prob(&ctx, t));
            }
        }
    }

    #[test]
    fn sep_resets_the_context() {
        let v = Vocab::build(["a", "b", "c"]);
        let lm = train_ngram(&[encode(&v, "a b c")], &v, 3, 0.1).unwrap();
        let with_prompt = [v.id("c"), v.id("c"), crate::models::vocab::SEP, v.id("a")];
        assert_eq!(
            lm.next_distribution(&with_prompt),
            lm.next_distribution(&[v.id("a")])
        );
    }

    #[test]
    fn errors() {
        let v = Vocab::build(["a"]);
        assert_eq!(
            train_ngram(&[], &v, 2, 0.1).unwrap_err(),
            ModelError::EmptyCorpus
        );
        assert!(train_ngram(&[vec![4]], &v, 2, 0.0).is_err());
    }
}
