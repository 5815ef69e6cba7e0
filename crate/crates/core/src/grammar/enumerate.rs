use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::One;

use super::{normalized, Choice, Grammar, GrammarError, Symbol};

/// A complete derivation of one seed template with its exact probability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Derivation {
    pub template_index: usize,
    pub choices: Vec<Choice>,
    pub skeleton: Vec<Symbol>,
    pub probability: BigRational,
}

#[derive(Clone)]
struct Partial {
    choices: Vec<Choice>,
    skeleton: Vec<Symbol>,
    probability: BigRational,
}

/// Exhaustively list every derivation of every seed template.
///
/// Fails with `TooManyDerivations` if the grammar is recursive or the
/// derivation count exceeds `max_count`.
pub fn enumerate_derivations(
    g: &Grammar,
    max_count: usize,
) -> Result<Vec<Derivation>, GrammarError> {
    let mut counts = BTreeMap::new();
    let mut total: u128 = 0;
    for t in &g.templates {
        let n = count_seq(g, &t.rhs, &mut counts, &mut Vec::new())
            .ok_or(GrammarError::TooManyDerivations(max_count))?;
        total = total.saturating_add(n);
    }
    if total > max_count as u128 {
        return Err(GrammarError::TooManyDerivations(max_count));
    }

    let rule_probs: BTreeMap<&str, Vec<BigRational>> = g
        .rules
        .iter()
        .map(|(k, r)| (k.as_str(), r.probabilities()))
        .collect();
    let template_probs = normalized(&g.template_weights());

    let mut out = Vec::with_capacity(total as usize);
    for (index, (t, p)) in g.templates.iter().zip(template_probs).enumerate() {
        for partial in expand_seq(g, &rule_probs, &t.rhs) {
            out.push(Derivation {
                template_index: index,
                choices: partial.choices,
                skeleton: partial.skeleton,
                probability: partial.probability * p.clone(),
            });
        }
    }
    Ok(out)
}

// None means unbounded (recursion).
fn count_seq<'g>(
    g: &'g Grammar,
    rhs: &'g [Symbol],
    memo: &mut BTreeMap<&'g str, u128>,
    stack: &mut Vec<&'g str>,
) -> Option<u128> {
    let mut product: u128 = 1;
    for s in rhs {
        if let Symbol::Nonterminal(name) = s {
            product = product.saturating_mul(count_nt(g, name, memo, stack)?);
        }
    }
    Some(product)
}

fn count_nt<'g>(
    g: &'g Grammar,
    name: &'g str,
    memo: &mut BTreeMap<&'g str, u128>,
    stack: &mut Vec<&'g str>,
) -> Option<u128> {
    if let Some(&n) = memo.get(name) {
        return Some(n);
    }
    if stack.contains(&name) {
        return None;
    }
    stack.push(name);
    let mut sum: u128 = 0;
    for alt in &g.rules[name].alternatives {
        sum = sum.saturating_add(count_seq(g, &alt.rhs, memo, stack)?);
    }
    stack.pop();
    memo.insert(name, sum);
    Some(sum)
}

fn expand_seq(
    g: &Grammar,
    probs: &BTreeMap<&str, Vec<BigRational>>,
    rhs: &[Symbol],
) -> Vec<Partial> {
    let mut acc = vec![Partial {
        choices: Vec::new(),
        skeleton: Vec::new(),
        probability: BigRational::one(),
    }];
    for symbol in rhs {
        match symbol {
            Symbol::Nonterminal(name) => {
                let mut options = Vec::new();
                for (i, alt) in g.rules[name].alternatives.iter().enumerate() {
                    for mut sub in expand_seq(g, probs, &alt.rhs) {
                        sub.choices.insert(
                            0,
                            Choice {
                                lhs: name.clone(),
                                alternative: i,
                            },
                        );
                        sub.probability *= probs[name.as_str()][i].clone();
                        options.push(sub);
                    }
                }
                let mut next = Vec::with_capacity(acc.len() * options.len());
                for prefix in &acc {
                    for opt in &options {
                        let mut p = prefix.clone();
                        p.choices.extend(opt.choices.iter().cloned());
                        p.skeleton.extend(opt.skeleton.iter().cloned());
                        p.probability *= opt.probability.clone();
                        next.push(p);
                    }
                }
                acc = next;
            }
            other => {
                for p in &mut acc {
                    p.skeleton.push(other.clone());
                }
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_grammar;
    use num_traits::Zero;

    fn grammar(templates: &str, variables: &str) -> Grammar {
        parse_grammar(&format!(
            "<templates>\n{templates}\n<variables>\n{variables}\n"
        ))
        .unwrap()
        .grammar
    }

    #[test]
    fn single_binary_choice() {
        let g = grammar("[A] [LABEL] [LEN]", "[A]: x | y");
        let d = enumerate_derivations(&g, 100).unwrap();
        assert_eq!(d.len(), 2);
        for x in &d {
            assert_eq!(x.probability.to_string(), "1/2");
        }
    }

    #[test]
    fn two_templates_three_alternatives() {
        let g = grammar("[A] [LABEL]\n[A] [LEN]", "[A]: x | y | z");
        let d = enumerate_derivations(&g, 100).unwrap();
        assert_eq!(d.len(), 6);
        for x in &d {
            assert_eq!(x.probability.to_string(), "1/6");
        }
    }

    #[test]
    fn recursion_and_limit() {
        let g = grammar("[A] [LABEL] [LEN]", "[A]: x [A] | y");
        assert_eq!(
            enumerate_derivations(&g, 1000).unwrap_err(),
            GrammarError::TooManyDerivations(1000)
        );
        let g = grammar("[A] [A] [LABEL] [LEN]", "[A]: x | y | z");
        assert!(enumerate_derivations(&g, 8).is_err());
        assert_eq!(enumerate_derivations(&g, 9).unwrap().len(), 9);
    }

    #[test]
    fn choices_follow_preorder_and_replay() {
        let g = grammar(
            "[A] and [B] [LABEL] [LEN]",
            "[A]: [C] c | a\n[B]: b1 | b2 *3\n[C]: c1 | c2",
        );
        let d = enumerate_derivations(&g, 100).unwrap();
        let total: BigRational = d.iter().map(|x| x.probability.clone()).sum();
        assert!((total - BigRational::one()).is_zero());
        for x in &d {
            assert_eq!(g.replay(x.template_index, &x.choices).unwrap(), x.skeleton);
        }
        let first = &d[0];
        let lhs: Vec<&str> = first.choices.iter().map(|c| c.lhs.as_str()).collect();
        assert_eq!(lhs, ["A", "C", "B"]);
    }
}
