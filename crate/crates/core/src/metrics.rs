//! Evaluation: control accuracies, corpus BLEU-4, 4-gram entropy and
//! perplexity.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::LmScorer;
use crate::models::vocab::TokenId;
use crate::schema::{AttrSpec, AttributeSchema};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no input records")]
    EmptyInput,
    #[error("record {0} has no length target")]
    NoLengthTarget(usize),
    #[error("record {0} has no label target")]
    NoLabelTarget(usize),
    #[error("no text has at least 4 tokens")]
    TooShort,
}

/// One generated text with what it was asked to satisfy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub target: AttrSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub text: String,
    pub token_count: usize,
}

/// Predicts the label of a text; must be deterministic.
pub trait LabelOracle: Sync {
    fn predict(&self, text: &str) -> usize;
}

/// Sum with pairwise splitting, so the result does not depend on how
/// callers batch the inputs.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

fn fraction(hits: usize, n: usize) -> f64 {
    hits as f64 / n as f64
}

pub fn length_accuracy(
    records: &[GenerationRecord],
    schema: &AttributeSchema,
) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut hits = 0;
    for (i, r) in records.iter().enumerate() {
        let target = r.target.length_id.ok_or(MetricsError::NoLengthTarget(i))?;
        hits += usize::from(schema.length_level_of(r.token_count) == target);
    }
    Ok(fraction(hits, records.len()))
}

pub fn label_accuracy(
    records: &[GenerationRecord],
    oracle: &dyn LabelOracle,
) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut hits = 0;
    for (i, r) in records.iter().enumerate() {
        let target = r.target.label_id.ok_or(MetricsError::NoLabelTarget(i))?;
        hits += usize::from(oracle.predict(&r.text) == target);
    }
    Ok(fraction(hits, records.len()))
}

/// Fraction of records meeting both the label and the length target.
pub fn compositional_accuracy(
    records: &[GenerationRecord],
    oracle: &dyn LabelOracle,
    schema: &AttributeSchema,
) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut hits = 0;
    for (i, r) in records.iter().enumerate() {
        let label = r.target.label_id.ok_or(MetricsError::NoLabelTarget(i))?;
        let length = r.target.length_id.ok_or(MetricsError::NoLengthTarget(i))?;
        hits += usize::from(
            oracle.predict(&r.text) == label && schema.length_level_of(r.token_count) == length,
        );
    }
    Ok(fraction(hits, records.len()))
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    for w in tokens.windows(n) {
        *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    m
}

/// Corpus BLEU-4 of every candidate against the shared reference set.
///
/// Clipped n-gram counts are pooled over candidates; the brevity penalty
/// uses, per candidate, the reference length closest to it (shorter wins a
/// tie). Without smoothing any zero precision gives 0; with it, orders 2–4
/// use `(hits + 1) / (total + 1)`.
pub fn bleu4<S: AsRef<str>>(
    candidates: &[Vec<S>],
    references: &[Vec<S>],
    smoothing: bool,
) -> Result<f64, MetricsError> {
    if candidates.is_empty() || references.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut max_ref: Vec<HashMap<Vec<&str>, usize>> = vec![HashMap::new(); 4];
    for r in references {
        for (n, table) in max_ref.iter_mut().enumerate() {
            for (g, c) in ngram_counts(r, n + 1) {
                let e = table.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
    }
    let mut ref_lens: Vec<usize> = references.iter().map(Vec::len).collect();
    ref_lens.sort_unstable();
    ref_lens.dedup();

    let mut hits = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for cand in candidates {
        c_len += cand.len();
        r_len += ref_lens
            .iter()
            .copied()
            .min_by_key(|&r| (r.abs_diff(cand.len()), r))
            .unwrap_or(0);
        for n in 0..4 {
            for (g, c) in ngram_counts(cand, n + 1) {
                hits[n] += c.min(max_ref[n].get(&g).copied().unwrap_or(0));
                totals[n] += c;
            }
        }
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        let (h, t) = if smoothing && n > 0 {
            (hits[n] + 1, totals[n] + 1)
        } else {
            (hits[n], totals[n])
        };
        if h == 0 {
            return Ok(0.0);
        }
        log_p += (h as f64 / t as f64).ln() / 4.0;
    }
    let bp = if c_len < r_len {
        (1.0 - r_len as f64 / c_len as f64).exp()
    } else {
        1.0
    };
    Ok(bp * log_p.exp())
}

/// Shannon entropy in bits of the pooled token 4-gram distribution.
pub fn entropy4<S: AsRef<str>>(texts: &[Vec<S>]) -> Result<f64, MetricsError> {
    let mut counts: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
    for t in texts {
        for (g, c) in ngram_counts(t, 4) {
            *counts.entry(g).or_insert(0) += c;
        }
    }
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(MetricsError::TooShort);
    }
    let terms: Vec<f64> = counts
        .values()
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .collect();
    Ok(pairwise_sum(&terms).max(0.0))
}

/// `exp` of the mean per-token negative log-likelihood, EOS included.
/// Each text is scored after `prompt`.
pub fn perplexity(
    lm: &dyn LmScorer,
    prompt: &[TokenId],
    texts: &[Vec<TokenId>],
) -> Result<f64, MetricsError> {
    if texts.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut nll = Vec::new();
    for t in texts {
        let mut ctx = prompt.to_vec();
        for &tok in t.iter().chain(std::iter::once(&lm.eos())) {
            nll.push(-lm.prob(&ctx, tok).ln());
            ctx.push(tok);
        }
    }
    Ok((pairwise_sum(&nll) / nll.len() as f64).exp())
}

/// Uniform distribution over `size` tokens; EOS is the last id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformLm(pub usize);

impl LmScorer for UniformLm {
    fn vocab_size(&self) -> usize {
        self.0
    }
    fn eos(&self) -> TokenId {
        (self.0 - 1) as TokenId
    }
    fn next_distribution(&self, _: &[TokenId]) -> Vec<f64> {
        vec![1.0 / self.0 as f64; self.0]
    }
    fn prob(&self, _: &[TokenId], _: TokenId) -> f64 {
        1.0 / self.0 as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length_acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comp_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diversity {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy4: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ppl: Option<f64>,
}

/// Metrics for one set of generations, grouped like a results table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub diversity: Diversity,
    pub quality: Quality,
    pub control: Control,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub strata: BTreeMap<String, MetricsReport>,
}

/// What to compute beyond control accuracy.
pub struct EvalInputs<'a> {
    pub schema: &'a AttributeSchema,
    pub oracle: &'a dyn LabelOracle,
    /// Tokenized reference texts for BLEU.
    pub references: &'a [Vec<String>],
    /// Scorer and vocabulary encoder for perplexity.
    pub scorer: Option<(&'a dyn LmScorer, &'a dyn Fn(&str) -> Vec<TokenId>)>,
    pub smoothing: bool,
}

/// Report over `records`; control metrics are filled when every record
/// carries the needed targets. Diversity metrics that cannot be computed
/// (all texts shorter than 4 tokens) are left empty.
pub fn evaluate(
    records: &[GenerationRecord],
    inputs: &EvalInputs,
) -> Result<MetricsReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let toks: Vec<Vec<&str>> = records
        .iter()
        .map(|r| r.text.split_whitespace().collect())
        .collect();
    let refs: Vec<Vec<&str>> = inputs
        .references
        .iter()
        .map(|r| r.iter().map(String::as_str).collect())
        .collect();
    let bleu = if refs.is_empty() {
        None
    } else {
        Some(bleu4(&toks, &refs, inputs.smoothing)?)
    };
    let ppl = match inputs.scorer {
        Some((lm, encode)) => {
            let encoded: Vec<Vec<TokenId>> = records.iter().map(|r| encode(&r.text)).collect();
            Some(perplexity(lm, &[], &encoded)?)
        }
        None => None,
    };
    let label_acc = label_accuracy(records, inputs.oracle).ok();
    let length_acc = length_accuracy(records, inputs.schema).ok();
    let comp_acc = compositional_accuracy(records, inputs.oracle, inputs.schema).ok();
    Ok(MetricsReport {
        n: records.len(),
        diversity: Diversity {
            bleu4: bleu,
            entropy4: entropy4(&toks).ok(),
        },
        quality: Quality { ppl },
        control: Control {
            label_acc,
            length_acc,
            comp_acc,
        },
        strata: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::ag_schema;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    struct FirstWord;
    impl LabelOracle for FirstWord {
        fn predict(&self, text: &str) -> usize {
            text.split_whitespace().next().unwrap().parse().unwrap()
        }
    }

    fn rec(label: usize, length: usize, text: &str) -> GenerationRecord {
        GenerationRecord {
            target: AttrSpec::both(label, length),
            command: None,
            text: text.to_string(),
            token_count: text.split_whitespace().count(),
        }
    }

    #[test]
    fn bleu_hand_worked() {
        let refs = vec![
            words("the cat sat on the mat"),
            words("a cat is on the mat"),
        ];
        let cands = vec![words("the cat is on the mat"), words("a cat sat on mat")];
        assert!((bleu4(&cands, &refs, false).unwrap() - 0.6130360842467292).abs() < 1e-9);
        assert!((bleu4(&cands, &refs, true).unwrap() - 0.6649543267426524).abs() < 1e-9);
        let mut rev = refs.clone();
        rev.reverse();
        assert_eq!(
            bleu4(&cands, &rev, false).unwrap(),
            bleu4(&cands, &refs, false).unwrap()
        );
        assert_eq!(bleu4(&refs[..1], &refs, false).unwrap(), 1.0);
        assert_eq!(bleu4(&[words("x y z w v")], &refs, false).unwrap(), 0.0);
        assert_eq!(
            bleu4::<String>(&[], &refs, false),
            Err(MetricsError::EmptyInput)
        );
    }

    #[test]
    fn entropy_cases() {
        let distinct = words("a b c d e f g h i j k");
        assert!((entropy4(std::slice::from_ref(&distinct)).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(
            entropy4(&[words("a b c d"), words("a b c d")]).unwrap(),
            0.0
        );
        let mixed = [
            words("a b c d"),
            words("a b c d"),
            words("e f g h"),
            words("i j k l"),
        ];
        assert!((entropy4(&mixed).unwrap() - 1.5).abs() < 1e-12);
        let mut rev = mixed.to_vec();
        rev.reverse();
        assert_eq!(entropy4(&rev).unwrap(), entropy4(&mixed).unwrap());
        assert_eq!(entropy4(&[words("a b c")]), Err(MetricsError::TooShort));
    }

    struct Table3;
    impl LmScorer for Table3 {
        fn vocab_size(&self) -> usize {
            3
        }
        fn eos(&self) -> TokenId {
            0
        }
        fn next_distribution(&self, _: &[TokenId]) -> Vec<f64> {
            vec![0.25, 0.5, 0.25]
        }
    }

    #[test]
    fn perplexity_closed_forms() {
        let p = perplexity(&UniformLm(7), &[], &[vec![1, 2, 3], vec![4]]).unwrap();
        assert!((p - 7.0).abs() < 1e-9);
        let p = perplexity(&Table3, &[], &[vec![1, 2]]).unwrap();
        assert!((p - 2f64.powf(5.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn accuracies() {
        let schema = ag_schema();
        let cut = schema.cutoffs();
        let at = |lvl: usize| "0 ".repeat(if lvl == 0 { 1 } else { cut[lvl] });
        let mut rs = Vec::new();
        for i in 0..10 {
            let text = at(if i < 7 { 1 } else { 0 });
            rs.push(rec(0, 1, text.trim()));
        }
        assert!((length_accuracy(&rs, &schema).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(label_accuracy(&rs, &FirstWord).unwrap(), 1.0);
        assert_eq!(
            compositional_accuracy(&rs, &FirstWord, &schema).unwrap(),
            length_accuracy(&rs, &schema).unwrap()
        );
        rs[0].target = AttrSpec::label(0);
        assert_eq!(
            length_accuracy(&rs, &schema),
            Err(MetricsError::NoLengthTarget(0))
        );
        assert_eq!(length_accuracy(&[], &schema), Err(MetricsError::EmptyInput));
    }
}
