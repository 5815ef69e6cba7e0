use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Example, SplitBundle};
use crate::command::{Command, CommandGenerator};
use crate::rng::{derive_seed, pick_uniform, substream};
use crate::schema::AttrSpec;
use crate::tokenize::tokenizer_for;

/// Appended to a prefix that covers the whole text, so discriminators can
/// tell a finished text from an unfinished one.
pub const EOS_TOKEN: &str = "</s>";

/// Which prefix lengths of each text become pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefixPolicy {
    /// Bernoulli inclusion rate per prefix length.
    pub rate: f64,
    /// Longest prefix considered.
    pub cap: usize,
}

impl Default for PrefixPolicy {
    fn default() -> Self {
        PrefixPolicy {
            rate: 0.25,
            cap: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipMask {
    None,
    Label,
    Length,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    pub example_id: String,
    pub command_text: String,
    pub prefix_tokens: Vec<String>,
    pub y: u8,
    pub flip: FlipMask,
    pub source_attrs: AttrSpec,
    pub command_attrs: AttrSpec,
}

/// A (command, text) training record for prefix conditioning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandExample {
    pub id: String,
    pub text: String,
    pub command: Command,
}

/// One command per supervised training example, expressing the attributes
/// the split allows for it.
pub fn make_command_dataset(
    split: &SplitBundle,
    generator: &CommandGenerator,
    seed: u64,
) -> Result<Vec<CommandExample>, CorpusError> {
    let seed = derive_seed(seed, "commands");
    split
        .train_supervised
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let command = generator
                .generate(&split.command_attrs(e), &mut substream(seed, i as u64))
                .map_err(|source| CorpusError::Command {
                    id: e.id.clone(),
                    source,
                })?;
            Ok(CommandExample {
                id: e.id.clone(),
                text: e.text.clone(),
                command,
            })
        })
        .collect()
}

fn flip<R: Rng + ?Sized>(
    attrs: &AttrSpec,
    split: &SplitBundle,
    n_labels: usize,
    n_lengths: usize,
    rng: &mut R,
) -> Option<(AttrSpec, FlipMask)> {
    let mut options: Vec<(FlipMask, Vec<AttrSpec>)> = Vec::new();
    let labels: Vec<usize> = match attrs.label_id {
        Some(l) => (0..n_labels).filter(|&x| x != l).collect(),
        None => Vec::new(),
    };
    let lengths: Vec<usize> = match attrs.length_id {
        Some(m) => (0..n_lengths).filter(|&x| x != m).collect(),
        None => Vec::new(),
    };
    let label_only: Vec<AttrSpec> = labels
        .iter()
        .map(|&l| AttrSpec {
            label_id: Some(l),
            ..*attrs
        })
        .collect();
    let length_only: Vec<AttrSpec> = lengths
        .iter()
        .map(|&m| AttrSpec {
            length_id: Some(m),
            ..*attrs
        })
        .collect();
    let both: Vec<AttrSpec> = labels
        .iter()
        .flat_map(|&l| lengths.iter().map(move |&m| AttrSpec::both(l, m)))
        .collect();
    for (mask, cands) in [
        (FlipMask::Label, label_only),
        (FlipMask::Length, length_only),
        (FlipMask::Both, both),
    ] {
        let cands: Vec<AttrSpec> = cands.into_iter().filter(|a| split.allows(a)).collect();
        if !cands.is_empty() {
            options.push((mask, cands));
        }
    }
    if options.is_empty() {
        return None;
    }
    let (mask, cands) = &options[pick_uniform(options.len(), rng)];
    Some((cands[pick_uniform(cands.len(), rng)], *mask))
}

fn example_pairs(
    e: &Example,
    split: &SplitBundle,
    generator: &CommandGenerator,
    policy: &PrefixPolicy,
    rng: &mut impl Rng,
) -> Result<Vec<PairExample>, CorpusError> {
    let schema = generator.schema();
    let tokenizer = tokenizer_for(&schema.tokenizer_id)
        .ok_or_else(|| CorpusError::UnknownTokenizer(schema.tokenizer_id.clone()))?;
    let tokens = tokenizer.tokenize(&e.text);
    let attrs = split.command_attrs(e);
    let cmd_err = |source| CorpusError::Command {
        id: e.id.clone(),
        source,
    };
    let mut out = Vec::new();
    for i in 1..=tokens.len().min(policy.cap) {
        if rng.gen::<f64>() >= policy.rate {
            continue;
        }
        let mut prefix = tokens[..i].to_vec();
        if i == tokens.len() {
            prefix.push(EOS_TOKEN.to_string());
        }
        let pos = generator.generate(&attrs, rng).map_err(cmd_err)?;
        let (neg_attrs, mask) = flip(
            &attrs,
            split,
            schema.num_labels(),
            schema.num_lengths(),
            rng,
        )
        .ok_or_else(|| CorpusError::CannotFlip(e.id.clone()))?;
        let neg = generator.generate(&neg_attrs, rng).map_err(cmd_err)?;
        out.push(PairExample {
            example_id: e.id.clone(),
            command_text: pos.text,
            prefix_tokens: prefix.clone(),
            y: 1,
            flip: FlipMask::None,
            source_attrs: attrs,
            command_attrs: attrs,
        });
        out.push(PairExample {
            example_id: e.id.clone(),
            command_text: neg.text,
            prefix_tokens: prefix,
            y: 0,
            flip: mask,
            source_attrs: attrs,
            command_attrs: neg_attrs,
        });
    }
    Ok(out)
}

/// Positive and negative (command, prefix) pairs for every sampled prefix
/// of every supervised training example.
pub fn make_pair_dataset(
    split: &SplitBundle,
    generator: &CommandGenerator,
    policy: &PrefixPolicy,
    seed: u64,
) -> Result<Vec<PairExample>, CorpusError> {
    let seed = derive_seed(seed, "pairs");
    let mut out = Vec::new();
    for (i, e) in split.train_supervised.iter().enumerate() {
        out.extend(example_pairs(
            e,
            split,
            generator,
            policy,
            &mut substream(seed, i as u64),
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests::ag_schema;
    use crate::corpus::{build_split, Ratios, SplitKind};
    use crate::grammar::parse_grammar;
    use crate::schema::{parse_schema, SchemaMeta};
    use crate::tokenize::WhitespaceTokenizer;

    fn grammar() -> crate::grammar::Grammar {
        parse_grammar(
            "<templates>\n[V] a [LEN] [DOMAIN] about [LABEL].\n[V] something about [LABEL].\n\
             [V] a [LEN] [DOMAIN].\n<variables>\n[V]: write | give me\n",
        )
        .unwrap()
        .grammar
    }

    fn corpus(schema: &crate::schema::AttributeSchema, n: usize, labels: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let len = 5 + (i * 13) % 70;
                Example::new(
                    format!("e{i}"),
                    vec!["w"; len].join(" "),
                    i % labels,
                    "t",
                    schema,
                    &WhitespaceTokenizer,
                )
            })
            .collect()
    }

    #[test]
    fn pairs_are_balanced_and_labelled() {
        let s = ag_schema();
        let g = grammar();
        let gen = CommandGenerator::new(&g, &s);
        let ex = corpus(&s, 60, 4);
        let split = build_split(&ex, &s, SplitKind::Full, Ratios::default(), 0).unwrap();
        let pairs = make_pair_dataset(&split, &gen, &PrefixPolicy::default(), 0).unwrap();
        let pos = pairs.iter().filter(|p| p.y == 1).count();
        assert!(pos > 0);
        assert_eq!(pos * 2, pairs.len());
        for p in &pairs {
            let recovered = s.recover_attrs(&p.command_text).unwrap();
            assert_eq!(recovered, p.command_attrs);
            assert_eq!(p.y == 1, recovered == p.source_attrs);
            assert_eq!(p.y == 1, p.flip == FlipMask::None);
            assert!(p.prefix_tokens.len() <= 65);
        }
        assert_eq!(
            pairs,
            make_pair_dataset(&split, &gen, &PrefixPolicy::default(), 0).unwrap()
        );
    }

    #[test]
    fn single_label_schema_flips_length() {
        let s = parse_schema(
            "0: news",
            "0: short\n20: medium\n40: long",
            &SchemaMeta {
                label_attr_names: vec!["topic".into()],
                length_attr_names: vec!["length".into()],
                domains: vec!["report".into()],
                tokenizer_id: "ws".into(),
            },
        )
        .unwrap();
        let g = grammar();
        let gen = CommandGenerator::new(&g, &s);
        let ex = corpus(&s, 40, 1);
        let split = build_split(&ex, &s, SplitKind::Full, Ratios::default(), 0).unwrap();
        let pairs = make_pair_dataset(&split, &gen, &PrefixPolicy::default(), 2).unwrap();
        assert!(pairs
            .iter()
            .filter(|p| p.y == 0)
            .all(|p| p.flip == FlipMask::Length));

        // a label-only target in a one-class schema has nothing to flip
        let mut split = split;
        split.length_suppressed = ex.iter().map(|e| e.id.clone()).collect();
        assert!(matches!(
            make_pair_dataset(&split, &gen, &PrefixPolicy::default(), 2).unwrap_err(),
            CorpusError::CannotFlip(_)
        ));
    }

    #[test]
    fn compositional_commands_never_pair_noncomp_with_length() {
        let s = ag_schema();
        let g = grammar();
        let gen = CommandGenerator::new(&g, &s);
        let ex = corpus(&s, 80, 4);
        let split = build_split(
            &ex,
            &s,
            SplitKind::Compositional { noncomp: 1 },
            Ratios::default(),
            0,
        )
        .unwrap();
        let pairs = make_pair_dataset(&split, &gen, &PrefixPolicy::default(), 0).unwrap();
        for p in &pairs {
            let a = s.recover_attrs(&p.command_text).unwrap();
            assert!(!(a.label_id == Some(1) && a.length_id.is_some()));
        }
        let commands = make_command_dataset(&split, &gen, 0).unwrap();
        assert_eq!(commands.len(), split.train_supervised.len());
        for c in &commands {
            assert_eq!(s.recover_attrs(&c.command.text), Some(c.command.attrs));
            assert!(!(c.command.attrs.label_id == Some(1) && c.command.attrs.length_id.is_some()));
        }
    }
}
