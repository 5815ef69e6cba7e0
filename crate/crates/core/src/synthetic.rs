//! Synthetic letter-language task with a known labeling rule.
//!
//! Thirty two-letter tokens: four topic groups of six (`ka..ky`, `za..zy`,
//! `va..vy`, `xa..xy`) and six fillers (`qa..qy`). A text of topic `t`
//! takes each token from group `t` with probability `topic_rate`, otherwise
//! uniformly from the other 24 tokens. The true label of any text is its
//! majority topic group.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{assign_lengths, Example, Ratios};
use crate::grammar::{parse_grammar, Grammar, GrammarError};
use crate::metrics::LabelOracle;
use crate::rng::{derive_seed, pick_uniform, substream};
use crate::schema::{derive_balanced_cutoffs, parse_schema, AttributeSchema, SchemaMeta};
use crate::tokenize::WhitespaceTokenizer;

pub const GRAMMAR: &str = include_str!("../data/synthetic.grammar");
pub const META: &str = include_str!("../data/synthetic.meta.json");
pub const T20: &str = include_str!("../data/t20.grammar");
pub const T40: &str = include_str!("../data/t40.grammar");
pub const HELDOUT20: &str = include_str!("../data/heldout20.grammar");

pub const GROUP_PREFIXES: [char; 4] = ['k', 'z', 'v', 'x'];
pub const FILLER_PREFIX: char = 'q';
const VOWELS: [char; 6] = ['a', 'e', 'i', 'o', 'u', 'y'];

pub fn group_tokens(prefix: char) -> Vec<String> {
    VOWELS.iter().map(|v| format!("{prefix}{v}")).collect()
}

/// All 30 text tokens, groups first then fillers.
pub fn text_tokens() -> Vec<String> {
    GROUP_PREFIXES
        .iter()
        .chain(std::iter::once(&FILLER_PREFIX))
        .flat_map(|&p| group_tokens(p))
        .collect()
}

/// Topic group of a token, if it belongs to one.
pub fn token_group(token: &str) -> Option<usize> {
    let mut chars = token.chars();
    let (p, v) = (chars.next()?, chars.next()?);
    if chars.next().is_some() || !VOWELS.contains(&v) {
        return None;
    }
    GROUP_PREFIXES.iter().position(|&g| g == p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub topic_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_train: 5000,
            n_val: 500,
            n_test: 500,
            topic_rate: 0.7,
            min_len: 4,
            max_len: 30,
        }
    }
}

impl SyntheticConfig {
    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    /// Split ratios that reproduce the configured partition sizes.
    pub fn ratios(&self) -> Ratios {
        let n = self.total() as f64;
        Ratios {
            train: self.n_train as f64 / n,
            val: self.n_val as f64 / n,
            test: self.n_test as f64 / n,
        }
    }
}

/// Majority topic group; ties go to the lowest group, no group tokens to 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MajorityOracle;

impl LabelOracle for MajorityOracle {
    fn predict(&self, text: &str) -> usize {
        let mut counts = [0usize; 4];
        for t in text.split_whitespace() {
            if let Some(g) = token_group(t) {
                counts[g] += 1;
            }
        }
        let max = *counts.iter().max().unwrap();
        counts.iter().position(|&c| c == max).unwrap()
    }
}

pub fn meta() -> SchemaMeta {
    serde_json::from_str(META).expect("bundled meta is valid")
}

/// The command grammar and its schema, with length cutoffs as written.
pub fn grammar_and_schema() -> (Grammar, AttributeSchema) {
    let parsed = parse_grammar(GRAMMAR).expect("bundled grammar is valid");
    let schema = parse_schema(
        parsed.label_section.as_deref().unwrap_or_default(),
        parsed.length_section.as_deref().unwrap_or_default(),
        &meta(),
    )
    .expect("bundled schema is valid");
    (parsed.grammar, schema)
}

pub fn template_set(source: &str) -> Result<Grammar, GrammarError> {
    parse_grammar(source).map(|p| p.grammar)
}

/// Draw one text of the given topic.
pub fn sample_text<R: Rng + ?Sized>(topic: usize, config: &SyntheticConfig, rng: &mut R) -> String {
    let own = group_tokens(GROUP_PREFIXES[topic]);
    let others: Vec<String> = text_tokens()
        .into_iter()
        .filter(|t| !own.contains(t))
        .collect();
    let len = rng.gen_range(config.min_len..=config.max_len);
    (0..len)
        .map(|_| {
            if rng.gen_bool(config.topic_rate) {
                own[pick_uniform(own.len(), rng)].clone()
            } else {
                others[pick_uniform(others.len(), rng)].clone()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Corpus of `config.total()` texts. Topics are drawn uniformly; each
/// example's label is the oracle label of its text. Returns the examples
/// and the schema with cutoffs balanced over all token counts.
pub fn generate_corpus(config: &SyntheticConfig, seed: u64) -> (Vec<Example>, AttributeSchema) {
    let (_, schema) = grammar_and_schema();
    let seed = derive_seed(seed, "synthetic");
    let mut examples: Vec<Example> = (0..config.total())
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            let topic = pick_uniform(GROUP_PREFIXES.len(), &mut rng);
            let text = sample_text(topic, config, &mut rng);
            let label = MajorityOracle.predict(&text);
            Example::new(
                format!("syn-{i}"),
                text,
                label,
                "synthetic",
                &schema,
                &WhitespaceTokenizer,
            )
        })
        .collect();
    let counts: Vec<usize> = examples.iter().map(|e| e.token_count).collect();
    let cutoffs =
        derive_balanced_cutoffs(&counts, schema.num_lengths()).expect("lengths span three buckets");
    let schema = schema
        .with_cutoffs(&cutoffs)
        .expect("derived cutoffs are valid");
    assign_lengths(&mut examples, &schema);
    (examples, schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_layout() {
        let toks = text_tokens();
        assert_eq!(toks.len(), 30);
        assert_eq!(token_group("ze"), Some(1));
        assert_eq!(token_group("qa"), None);
        assert_eq!(token_group("kab"), None);
    }

    #[test]
    fn oracle_majority_and_ties() {
        assert_eq!(MajorityOracle.predict("za ze ka qa"), 1);
        assert_eq!(MajorityOracle.predict("xa ka"), 0);
        assert_eq!(MajorityOracle.predict("qa qe"), 0);
        assert_eq!(MajorityOracle.predict("va xa xe va xi"), 3);
    }

    #[test]
    fn corpus_is_balanced_and_deterministic() {
        let cfg = SyntheticConfig {
            n_train: 800,
            n_val: 100,
            n_test: 100,
            ..SyntheticConfig::default()
        };
        let (ex, schema) = generate_corpus(&cfg, 7);
        assert_eq!(ex.len(), 1000);
        let mut per_level = [0usize; 3];
        for e in &ex {
            per_level[e.length_id] += 1;
            assert!((4..=30).contains(&e.token_count));
            assert_eq!(e.label_id, MajorityOracle.predict(&e.text));
        }
        assert!(
            per_level.iter().all(|&c| (250..=420).contains(&c)),
            "{per_level:?}"
        );
        assert_eq!(schema.cutoffs()[0], 0);
        assert_eq!(generate_corpus(&cfg, 7).0, ex);
        let r = cfg.ratios();
        assert!((r.train + r.val + r.test - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bundled_grammars_parse() {
        let (g, s) = grammar_and_schema();
        assert!(g.templates.len() >= 9);
        assert_eq!(s.num_labels(), 4);
        assert_eq!(s.num_lengths(), 3);
        assert_eq!(template_set(T20).unwrap().templates.len(), 20);
        assert_eq!(template_set(T40).unwrap().templates.len(), 40);
        assert_eq!(template_set(HELDOUT20).unwrap().templates.len(), 20);
    }
}
