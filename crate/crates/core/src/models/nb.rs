use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::vocab::{TokenId, EOS};
use super::ModelError;
use crate::decode::{AttrDiscriminator, BinaryHeadDiscriminator};

/// Where a prefix stops: its length in tokens and whether it ends in EOS.
/// Lengths above `POSITION_CAP` share one bucket.
pub const POSITION_CAP: u32 = 64;

type Position = (bool, u32);

fn split_prefix(prefix: &[TokenId]) -> (&[TokenId], bool) {
    match prefix.last() {
        Some(&EOS) => (&prefix[..prefix.len() - 1], true),
        _ => (prefix, false),
    }
}

fn position(len: usize, ended: bool) -> Option<Position> {
    (len > 0 || ended).then_some((ended, (len as u32).min(POSITION_CAP)))
}

/// Raw per-class counts; the persisted form of [`NaiveBayes`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbCounts {
    pub num_classes: usize,
    pub alpha: f64,
    pub class_counts: Vec<u64>,
    pub unigrams: Vec<(TokenId, Vec<u64>)>,
    pub bigrams: Vec<((TokenId, TokenId), Vec<u64>)>,
    pub positions: Vec<(Position, Vec<u64>)>,
}

/// Log-likelihood table for one event space with Laplace smoothing.
#[derive(Debug, Clone, PartialEq)]
struct Table<K: std::hash::Hash + Eq> {
    seen: HashMap<K, Vec<f64>>,
    unseen: Vec<f64>,
}

impl<K: std::hash::Hash + Eq + Clone> Table<K> {
    fn build(entries: &[(K, Vec<u64>)], num_classes: usize, alpha: f64) -> Self {
        let mut totals = vec![0u64; num_classes];
        for (_, c) in entries {
            for (t, n) in totals.iter_mut().zip(c) {
                *t += n;
            }
        }
        let size = entries.len().max(1) as f64;
        let denom: Vec<f64> = totals
            .iter()
            .map(|&t| (t as f64 + alpha * size).ln())
            .collect();
        let seen = entries
            .iter()
            .map(|(k, c)| {
                let row = c
                    .iter()
                    .zip(&denom)
                    .map(|(&n, d)| (n as f64 + alpha).ln() - d)
                    .collect();
                (k.clone(), row)
            })
            .collect();
        let unseen = denom.iter().map(|d| alpha.ln() - d).collect();
        Table { seen, unseen }
    }

    fn row(&self, k: &K) -> &[f64] {
        self.seen.get(k).map_or(&self.unseen, Vec::as_slice)
    }
}

/// Multinomial naive Bayes over prefix unigrams and bigrams, plus a
/// categorical feature for where the prefix stops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "NbCounts", into = "NbCounts")]
pub struct NaiveBayes {
    counts: NbCounts,
    log_prior: Vec<f64>,
    unigrams: Table<TokenId>,
    bigrams: Table<(TokenId, TokenId)>,
    positions: Table<Position>,
}

impl From<NbCounts> for NaiveBayes {
    fn from(counts: NbCounts) -> Self {
        let total: u64 = counts.class_counts.iter().sum();
        let k = counts.num_classes;
        let a = counts.alpha;
        NaiveBayes {
            log_prior: counts
                .class_counts
                .iter()
                .map(|&n| (n as f64 / total as f64).ln())
                .collect(),
            unigrams: Table::build(&counts.unigrams, k, a),
            bigrams: Table::build(&counts.bigrams, k, a),
            positions: Table::build(&counts.positions, k, a),
            counts,
        }
    }
}

impl From<NaiveBayes> for NbCounts {
    fn from(m: NaiveBayes) -> Self {
        m.counts
    }
}

fn log_normalize(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    for s in scores {
        *s -= lse;
    }
}

fn add(acc: &mut [f64], row: &[f64]) {
    for (a, r) in acc.iter_mut().zip(row) {
        *a += r;
    }
}

impl NaiveBayes {
    pub fn num_classes(&self) -> usize {
        self.counts.num_classes
    }

    pub fn counts(&self) -> &NbCounts {
        &self.counts
    }

    /// Unnormalized log joint of the prefix's n-grams, without the position.
    fn ngram_scores(&self, tokens: &[TokenId]) -> Vec<f64> {
        let mut s = self.log_prior.clone();
        for (i, t) in tokens.iter().enumerate() {
            add(&mut s, self.unigrams.row(t));
            if i > 0 {
                add(&mut s, self.bigrams.row(&(tokens[i - 1], *t)));
            }
        }
        s
    }

    pub fn log_posterior(&self, prefix: &[TokenId]) -> Vec<f64> {
        let (tokens, ended) = split_prefix(prefix);
        let mut s = self.ngram_scores(tokens);
        if let Some(p) = position(tokens.len(), ended) {
            add(&mut s, self.positions.row(&p));
        }
        log_normalize(&mut s);
        s
    }

    /// Log posteriors of `prefix·t` for every candidate t.
    pub fn log_posterior_extensions(
        &self,
        prefix: &[TokenId],
        candidates: &[TokenId],
    ) -> Vec<Vec<f64>> {
        let (tokens, ended) = split_prefix(prefix);
        if ended {
            // nothing follows an EOS; fall back to full recomputation
            return candidates
                .iter()
                .map(|&t| {
                    let mut p = prefix.to_vec();
                    p.push(t);
                    self.log_posterior(&p)
                })
                .collect();
        }
        let base = self.ngram_scores(tokens);
        let n = tokens.len();
        candidates
            .iter()
            .map(|&t| {
                let mut s = base.clone();
                if t == EOS {
                    add(&mut s, self.positions.row(&position(n, true).unwrap()));
                } else {
                    add(&mut s, self.unigrams.row(&t));
                    if let Some(&last) = tokens.last() {
                        add(&mut s, self.bigrams.row(&(last, t)));
                    }
                    add(&mut s, self.positions.row(&position(n + 1, false).unwrap()));
                }
                log_normalize(&mut s);
                s
            })
            .collect()
    }
}

/// Train on (prefix, class) pairs. A prefix may end in EOS to mark a
/// complete text.
pub fn train_nb(
    data: &[(Vec<TokenId>, usize)],
    num_classes: usize,
    alpha: f64,
) -> Result<NaiveBayes, ModelError> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(ModelError::InvalidHyperparameter(format!("alpha {alpha}")));
    }
    let mut class_counts = vec![0u64; num_classes];
    let mut uni: BTreeMap<TokenId, Vec<u64>> = BTreeMap::new();
    let mut bi: BTreeMap<(TokenId, TokenId), Vec<u64>> = BTreeMap::new();
    let mut pos: BTreeMap<Position, Vec<u64>> = BTreeMap::new();
    for (prefix, c) in data {
        if *c >= num_classes {
            return Err(ModelError::InvalidHyperparameter(format!(
                "class {c} out of range"
            )));
        }
        class_counts[*c] += 1;
        let (tokens, ended) = split_prefix(prefix);
        for (i, t) in tokens.iter().enumerate() {
            uni.entry(*t).or_insert_with(|| vec![0; num_classes])[*c] += 1;
            if i > 0 {
                bi.entry((tokens[i - 1], *t))
                    .or_insert_with(|| vec![0; num_classes])[*c] += 1;
            }
        }
        if let Some(p) = position(tokens.len(), ended) {
            pos.entry(p).or_insert_with(|| vec![0; num_classes])[*c] += 1;
        }
    }
    if let Some(c) = class_counts.iter().position(|&n| n == 0) {
        return Err(ModelError::MissingClassExamples(c));
    }
    Ok(NaiveBayes::from(NbCounts {
        num_classes,
        alpha,
        class_counts,
        unigrams: uni.into_iter().collect(),
        bigrams: bi.into_iter().collect(),
        positions: pos.into_iter().collect(),
    }))
}

impl AttrDiscriminator for NaiveBayes {
    fn num_options(&self) -> usize {
        self.num_classes()
    }

    fn posterior(&self, prefix: &[TokenId]) -> Vec<f64> {
        self.log_posterior(prefix)
            .into_iter()
            .map(f64::exp)
            .collect()
    }

    fn log_prob_extensions(
        &self,
        prefix: &[TokenId],
        candidates: &[TokenId],
        option: usize,
    ) -> Vec<f64> {
        self.log_posterior_extensions(prefix, candidates)
            .into_iter()
            .map(|s| s[option])
            .collect()
    }
}

/// One binary naive-Bayes head per option, trained one-vs-rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryHeads {
    pub heads: Vec<NaiveBayes>,
}

pub fn train_binary_heads(
    data: &[(Vec<TokenId>, usize)],
    num_options: usize,
    alpha: f64,
) -> Result<BinaryHeads, ModelError> {
    let heads = (0..num_options)
        .map(|o| {
            let relabeled: Vec<(Vec<TokenId>, usize)> = data
                .iter()
                .map(|(p, c)| (p.clone(), usize::from(*c == o)))
                .collect();
            train_nb(&relabeled, 2, alpha).map_err(|e| match e {
                ModelError::MissingClassExamples(_) => ModelError::MissingClassExamples(o),
                other => other,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(BinaryHeads { heads })
}

impl BinaryHeadDiscriminator for BinaryHeads {
    fn num_options(&self) -> usize {
        self.heads.len()
    }

    fn head_prob(&self, prefix: &[TokenId], option: usize) -> f64 {
        self.heads[option].log_posterior(prefix)[1].exp()
    }

    fn log_prob_extensions(
        &self,
        prefix: &[TokenId],
        candidates: &[TokenId],
        option: usize,
    ) -> Vec<f64> {
        self.heads[option]
            .log_posterior_extensions(prefix, candidates)
            .into_iter()
            .map(|s| s[1])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // class 0 uses tokens 4..8, class 1 uses 8..12
    fn disjoint() -> Vec<(Vec<TokenId>, usize)> {
        let mut data = Vec::new();
        for c in 0..2u32 {
            for i in 0..20u32 {
                let seq: Vec<TokenId> = (0..6).map(|j| 4 + 4 * c + (i + j) % 4).collect();
                for len in 1..=seq.len() {
                    data.push((seq[..len].to_vec(), c as usize));
                }
                let mut full = seq.clone();
                full.push(EOS);
                data.push((full, c as usize));
            }
        }
        data
    }

    #[test]
    fn disjoint_vocabularies_are_confident() {
        let nb = train_nb(&disjoint(), 2, 1.0).unwrap();
        assert!(nb.posterior(&[4, 5, 6])[0] >= 0.99);
        assert!(nb.posterior(&[9, 10, 11, 8])[1] >= 0.99);
        let p = nb.posterior(&[]);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extensions_match_full_recomputation() {
        let nb = train_nb(&disjoint(), 2, 1.0).unwrap();
        let heads = train_binary_heads(&disjoint(), 2, 1.0).unwrap();
        let cands: Vec<TokenId> = (0..14).collect();
        for prefix in [vec![], vec![4], vec![4, 9, 5]] {
            let ext = nb.log_posterior_extensions(&prefix, &cands);
            let hx = heads.log_prob_extensions(&prefix, &cands, 1);
            for (i, &t) in cands.iter().enumerate() {
                let mut p = prefix.clone();
                p.push(t);
                let full = nb.log_posterior(&p);
                assert!((full[0] - ext[i][0]).abs() < 1e-12);
                assert!((heads.head_prob(&p, 1).ln() - hx[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heads_agree_with_multiclass_argmax() {
        let nb = train_nb(&disjoint(), 2, 1.0).unwrap();
        let heads = train_binary_heads(&disjoint(), 2, 1.0).unwrap();
        for prefix in [vec![4, 5, 6], vec![8, 9], vec![11, 10, 9, 8]] {
            let post = nb.posterior(&prefix);
            let nb_arg = if post[0] > post[1] { 0 } else { 1 };
            let h: Vec<f64> = (0..2).map(|o| heads.head_prob(&prefix, o)).collect();
            let h_arg = if h[0] > h[1] { 0 } else { 1 };
            assert_eq!(nb_arg, h_arg);
            assert!(h.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn missing_class_and_round_trip() {
        assert_eq!(
            train_nb(&[(vec![4], 0)], 2, 1.0).unwrap_err(),
            ModelError::MissingClassExamples(1)
        );
        let nb = train_nb(&disjoint(), 2, 1.0).unwrap();
        let json = serde_json::to_string(&nb).unwrap();
        let back: NaiveBayes = serde_json::from_str(&json).unwrap();
        assert_eq!(back.posterior(&[4, 9, EOS]), nb.posterior(&[4, 9, EOS]));
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }
}
