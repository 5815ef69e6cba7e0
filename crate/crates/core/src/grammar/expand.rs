use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sampling_distribution, Grammar, GrammarError, Symbol, MAX_EXPANSION_DEPTH};
use crate::rng::pick_weighted;

/// One rule application: `lhs` was rewritten with its `alternative`-th RHS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Choice {
    pub lhs: String,
    pub alternative: usize,
}

/// A fully expanded seed template. The skeleton holds only terminals and
/// slots; choices are recorded in top-down, left-to-right order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expansion {
    pub template_index: usize,
    pub choices: Vec<Choice>,
    pub skeleton: Vec<Symbol>,
}

/// Precomputed sampling tables for a grammar.
#[derive(Debug, Clone)]
pub struct Sampler<'g> {
    grammar: &'g Grammar,
    template_dist: Vec<f64>,
    rule_dists: BTreeMap<&'g str, Vec<f64>>,
}

impl<'g> Sampler<'g> {
    pub fn new(grammar: &'g Grammar) -> Self {
        Sampler {
            grammar,
            template_dist: sampling_distribution(&grammar.template_weights()),
            rule_dists: grammar
                .rules
                .iter()
                .map(|(k, r)| (k.as_str(), sampling_distribution(&r.weights())))
                .collect(),
        }
    }

    pub fn grammar(&self) -> &'g Grammar {
        self.grammar
    }

    /// Sample a seed template by weight and expand it.
    pub fn sample_expansion<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<Expansion, GrammarError> {
        let index = pick_weighted(&self.template_dist, rng);
        self.expand_template(index, rng)
    }

    pub fn expand_template<R: Rng + ?Sized>(
        &self,
        template_index: usize,
        rng: &mut R,
    ) -> Result<Expansion, GrammarError> {
        let mut choices = Vec::new();
        let mut skeleton = Vec::new();
        let mut pick = |lhs: &str| -> usize { pick_weighted(&self.rule_dists[lhs], rng) };
        self.grammar.expand_seq(
            &self.grammar.templates[template_index].rhs,
            0,
            &mut pick,
            &mut choices,
            &mut skeleton,
        )?;
        Ok(Expansion {
            template_index,
            choices,
            skeleton,
        })
    }
}

impl Grammar {
    pub fn sampler(&self) -> Sampler<'_> {
        Sampler::new(self)
    }

    /// Re-run a recorded derivation and return its skeleton.
    pub fn replay(
        &self,
        template_index: usize,
        choices: &[Choice],
    ) -> Result<Vec<Symbol>, GrammarError> {
        let template = self
            .templates
            .get(template_index)
            .ok_or_else(|| GrammarError::InvalidReplay(format!("no template {template_index}")))?;
        let mut queue = choices.iter();
        let mut bad: Option<String> = None;
        let mut pick = |lhs: &str| -> usize {
            match queue.next() {
                Some(c) if c.lhs == lhs && c.alternative < self.rules[lhs].alternatives.len() => {
                    c.alternative
                }
                other => {
                    bad.get_or_insert_with(|| {
                        format!("expected choice for [{lhs}], found {other:?}")
                    });
                    0
                }
            }
        };
        let mut replayed = Vec::new();
        let mut skeleton = Vec::new();
        self.expand_seq(&template.rhs, 0, &mut pick, &mut replayed, &mut skeleton)?;
        if let Some(msg) = bad {
            return Err(GrammarError::InvalidReplay(msg));
        }
        if replayed.len() != choices.len() {
            return Err(GrammarError::InvalidReplay("unused choices".into()));
        }
        Ok(skeleton)
    }

    fn expand_seq(
        &self,
        rhs: &[Symbol],
        depth: usize,
        pick: &mut dyn FnMut(&str) -> usize,
        choices: &mut Vec<Choice>,
        skeleton: &mut Vec<Symbol>,
    ) -> Result<(), GrammarError> {
        if depth > MAX_EXPANSION_DEPTH {
            return Err(GrammarError::ExpansionTooDeep(MAX_EXPANSION_DEPTH));
        }
        for symbol in rhs {
            match symbol {
                Symbol::Nonterminal(name) => {
                    let alternative = pick(name);
                    choices.push(Choice {
                        lhs: name.clone(),
                        alternative,
                    });
                    let alt = &self.rules[name].alternatives[alternative];
                    self.expand_seq(&alt.rhs, depth + 1, pick, choices, skeleton)?;
                }
                other => skeleton.push(other.clone()),
            }
        }
        Ok(())
    }
}
