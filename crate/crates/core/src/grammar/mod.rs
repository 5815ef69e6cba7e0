//! Sectioned command grammar: parsing, validation and representation.
//!
//! A grammar file has up to four sections, each introduced by a header on
//! its own line:
//!
//! ```text
//! <templates>
//! [PLS] [HEAD-FORM] a [TEXT-FORM] [LABEL-SEG].
//! <variables>
//! [PLS]: please | kindly *2
//! [HEAD-FORM]: generate | write
//! [TEXT-FORM]: [DOMAIN]
//! [LABEL-SEG]: with a [LABEL] [LABEL-NAME]
//! <label>
//! 0: world, international
//! <length>
//! 0: short
//! ```
//!
//! `<templates>` holds one seed template per line, `<variables>` one rule
//! per line with `|`-separated alternatives and an optional trailing `*w`
//! weight. `<label>` and `<length>` are handed to
//! [`crate::schema::parse_schema`] untouched.

mod enumerate;
mod expand;
mod lint;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use enumerate::{enumerate_derivations, Derivation};
pub use expand::{Choice, Expansion, Sampler};
pub use lint::{lint_grammar, Diagnostic};
pub use parse::{parse_grammar, ParsedGrammar};

/// Maximum nesting depth when sampling an expansion.
pub const MAX_EXPANSION_DEPTH: usize = 128;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GrammarError {
    #[error("malformed section: {0}")]
    MalformedSection(String),
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("dangling nonterminal [{0}]")]
    DanglingNonterminal(String),
    #[error("line {0}: empty alternative")]
    EmptyAlternative(usize),
    #[error("line {0}: weight must be a positive number")]
    NonPositiveWeight(usize),
    #[error("rule [{0}] is defined more than once")]
    DuplicateRule(String),
    #[error("reserved slot token [{0}] cannot be used as a rule name")]
    ReservedLhs(String),
    #[error("nonterminals cannot terminate: {}", .0.join(", "))]
    CycleWithoutEscape(Vec<String>),
    #[error("no seed template can produce a {0} slot")]
    MissingSlotCoverage(SlotKind),
    #[error("derivation count exceeds limit {0}")]
    TooManyDerivations(usize),
    #[error("expansion exceeded depth {0}")]
    ExpansionTooDeep(usize),
    #[error("invalid replay: {0}")]
    InvalidReplay(String),
}

/// Attribute placeholders that are filled with verbalizers after expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SlotKind {
    LabelValue,
    LabelName,
    LengthValue,
    LengthName,
    Domain,
}

impl SlotKind {
    pub const ALL: [SlotKind; 5] = [
        SlotKind::LabelValue,
        SlotKind::LabelName,
        SlotKind::LengthValue,
        SlotKind::LengthName,
        SlotKind::Domain,
    ];

    /// Name used inside brackets in grammar files.
    pub fn token(self) -> &'static str {
        match self {
            SlotKind::LabelValue => "LABEL",
            SlotKind::LabelName => "LABEL-NAME",
            SlotKind::LengthValue => "LEN",
            SlotKind::LengthName => "LEN-NAME",
            SlotKind::Domain => "DOMAIN",
        }
    }

    pub fn from_token(name: &str) -> Option<SlotKind> {
        SlotKind::ALL.into_iter().find(|k| k.token() == name)
    }
}

impl fmt::Display for SlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    Terminal(String),
    Nonterminal(String),
    Slot(SlotKind),
}

impl Symbol {
    fn write_source(&self, out: &mut String) {
        match self {
            Symbol::Terminal(t) => out.push_str(t),
            Symbol::Nonterminal(n) => {
                out.push('[');
                out.push_str(n);
                out.push(']');
            }
            Symbol::Slot(k) => {
                out.push('[');
                out.push_str(k.token());
                out.push(']');
            }
        }
    }
}

/// Render a symbol sequence back into grammar-file syntax.
pub fn symbols_to_source(symbols: &[Symbol]) -> String {
    let mut out = String::new();
    for s in symbols {
        s.write_source(&mut out);
    }
    out
}

pub type Weight = Ratio<u64>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alternative {
    pub rhs: Vec<Symbol>,
    pub weight: Weight,
}

impl Alternative {
    fn nonterminals(&self) -> impl Iterator<Item = &str> {
        self.rhs.iter().filter_map(|s| match s {
            Symbol::Nonterminal(n) => Some(n.as_str()),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub lhs: String,
    pub alternatives: Vec<Alternative>,
}

/// Normalize a list of positive weights into exact probabilities.
///
/// Both enumeration and sampling derive their distributions from this
/// function, so the sampler draws exactly the enumerated probabilities.
pub fn normalized(weights: &[Weight]) -> Vec<BigRational> {
    let exact: Vec<BigRational> = weights
        .iter()
        .map(|w| BigRational::new(BigInt::from(*w.numer()), BigInt::from(*w.denom())))
        .collect();
    let total: BigRational = exact.iter().cloned().sum();
    exact.into_iter().map(|w| w / total.clone()).collect()
}

/// Floating-point view of [`normalized`], used for sampling.
pub fn sampling_distribution(weights: &[Weight]) -> Vec<f64> {
    use num_traits::ToPrimitive;
    normalized(weights)
        .iter()
        .map(|p| p.to_f64().unwrap_or(0.0))
        .collect()
}

impl Rule {
    pub fn probabilities(&self) -> Vec<BigRational> {
        normalized(&self.weights())
    }

    pub fn weights(&self) -> Vec<Weight> {
        self.alternatives.iter().map(|a| a.weight).collect()
    }
}

/// An executable command grammar. Immutable once parsed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grammar {
    pub templates: Vec<Alternative>,
    pub rules: BTreeMap<String, Rule>,
    /// Lowercase hex SHA-256 of the source file bytes.
    pub source_hash: String,
}

impl Grammar {
    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.rules.get(name)
    }

    pub fn template_weights(&self) -> Vec<Weight> {
        self.templates.iter().map(|t| t.weight).collect()
    }

    /// Same templates, rules and weights; the source hash is ignored.
    pub fn same_structure(&self, other: &Grammar) -> bool {
        self.templates == other.templates && self.rules == other.rules
    }

    /// Serialize the templates and rules back into grammar-file syntax.
    pub fn to_source(&self) -> String {
        let mut out = String::from("<templates>\n");
        for t in &self.templates {
            out.push_str(&symbols_to_source(&t.rhs));
            push_weight(&mut out, t.weight);
            out.push('\n');
        }
        out.push_str("<variables>\n");
        for rule in self.rules.values() {
            out.push('[');
            out.push_str(&rule.lhs);
            out.push_str("]: ");
            for (i, alt) in rule.alternatives.iter().enumerate() {
                if i > 0 {
                    out.push_str(" | ");
                }
                out.push_str(&symbols_to_source(&alt.rhs));
                push_weight(&mut out, alt.weight);
            }
            out.push('\n');
        }
        out
    }

    /// Slots each nonterminal can possibly produce.
    pub(crate) fn derivable_slots(&self) -> BTreeMap<String, BTreeSet<SlotKind>> {
        let mut slots: BTreeMap<String, BTreeSet<SlotKind>> = self
            .rules
            .keys()
            .map(|k| (k.clone(), BTreeSet::new()))
            .collect();
        loop {
            let mut changed = false;
            for rule in self.rules.values() {
                let mut acc = slots[&rule.lhs].clone();
                for alt in &rule.alternatives {
                    for s in &alt.rhs {
                        match s {
                            Symbol::Slot(k) => {
                                acc.insert(*k);
                            }
                            Symbol::Nonterminal(n) => {
                                if let Some(set) = slots.get(n) {
                                    acc.extend(set.iter().copied());
                                }
                            }
                            Symbol::Terminal(_) => {}
                        }
                    }
                }
                if acc.len() != slots[&rule.lhs].len() {
                    slots.insert(rule.lhs.clone(), acc);
                    changed = true;
                }
            }
            if !changed {
                return slots;
            }
        }
    }

    /// Slots any derivation of seed template `index` can contain.
    pub fn template_slots(&self, index: usize) -> BTreeSet<SlotKind> {
        let derivable = self.derivable_slots();
        self.sequence_slots(&self.templates[index].rhs, &derivable)
    }

    fn sequence_slots(
        &self,
        rhs: &[Symbol],
        derivable: &BTreeMap<String, BTreeSet<SlotKind>>,
    ) -> BTreeSet<SlotKind> {
        let mut out = BTreeSet::new();
        for s in rhs {
            match s {
                Symbol::Slot(k) => {
                    out.insert(*k);
                }
                Symbol::Nonterminal(n) => {
                    if let Some(set) = derivable.get(n) {
                        out.extend(set.iter().copied());
                    }
                }
                Symbol::Terminal(_) => {}
            }
        }
        out
    }

    /// Nonterminals reachable from any seed template.
    pub(crate) fn reachable(&self) -> BTreeSet<String> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&str> = self
            .templates
            .iter()
            .flat_map(|t| t.nonterminals())
            .collect();
        while let Some(n) = stack.pop() {
            if !seen.insert(n.to_string()) {
                continue;
            }
            if let Some(rule) = self.rules.get(n) {
                for alt in &rule.alternatives {
                    stack.extend(alt.nonterminals());
                }
            }
        }
        seen
    }

    /// Check references, termination and slot coverage.
    pub(crate) fn validate(&self) -> Result<(), GrammarError> {
        let all_rhs = self
            .templates
            .iter()
            .chain(self.rules.values().flat_map(|r| r.alternatives.iter()));
        for alt in all_rhs {
            for n in alt.nonterminals() {
                if !self.rules.contains_key(n) {
                    return Err(GrammarError::DanglingNonterminal(n.to_string()));
                }
            }
        }
        self.check_termination()?;
        let derivable = self.derivable_slots();
        for kind in [SlotKind::LabelValue, SlotKind::LengthValue] {
            let covered = self
                .templates
                .iter()
                .any(|t| self.sequence_slots(&t.rhs, &derivable).contains(&kind));
            if !covered {
                return Err(GrammarError::MissingSlotCoverage(kind));
            }
        }
        Ok(())
    }

    /// The unit-production graph must be acyclic and every nonterminal must
    /// have at least one derivation into terminals and slots.
    fn check_termination(&self) -> Result<(), GrammarError> {
        // unit productions: A -> [B]
        let unit: BTreeMap<&str, Vec<&str>> = self
            .rules
            .values()
            .map(|r| {
                let targets = r
                    .alternatives
                    .iter()
                    .filter_map(|a| match a.rhs.as_slice() {
                        [Symbol::Nonterminal(n)] => Some(n.as_str()),
                        _ => None,
                    })
                    .collect();
                (r.lhs.as_str(), targets)
            })
            .collect();
        if let Some(cycle) = find_cycle(&unit) {
            return Err(GrammarError::CycleWithoutEscape(cycle));
        }

        let mut productive: BTreeSet<&str> = BTreeSet::new();
        loop {
            let before = productive.len();
            for r in self.rules.values() {
                if productive.contains(r.lhs.as_str()) {
                    continue;
                }
                let ok = r
                    .alternatives
                    .iter()
                    .any(|a| a.nonterminals().all(|n| productive.contains(n)));
                if ok {
                    productive.insert(r.lhs.as_str());
                }
            }
            if productive.len() == before {
                break;
            }
        }
        let stuck: Vec<String> = self
            .rules
            .keys()
            .filter(|k| !productive.contains(k.as_str()))
            .cloned()
            .collect();
        if stuck.is_empty() {
            Ok(())
        } else {
            Err(GrammarError::CycleWithoutEscape(stuck))
        }
    }
}

fn push_weight(out: &mut String, w: Weight) {
    if w != Weight::from_integer(1) {
        if *w.denom() == 1 {
            out.push_str(&format!(" *{}", w.numer()));
        } else {
            out.push_str(&format!(" *{}/{}", w.numer(), w.denom()));
        }
    }
}

fn find_cycle(graph: &BTreeMap<&str, Vec<&str>>) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Fresh,
        Active,
        Done,
    }
    fn visit<'a>(
        node: &'a str,
        graph: &BTreeMap<&'a str, Vec<&'a str>>,
        marks: &mut BTreeMap<&'a str, Mark>,
        path: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        marks.insert(node, Mark::Active);
        path.push(node);
        for &next in graph.get(node).map(|v| v.as_slice()).unwrap_or(&[]) {
            match marks.get(next).copied().unwrap_or(Mark::Fresh) {
                Mark::Active => {
                    let start = path.iter().position(|n| *n == next).unwrap_or(0);
                    return Some(path[start..].iter().map(|s| s.to_string()).collect());
                }
                Mark::Fresh => {
                    if let Some(c) = visit(next, graph, marks, path) {
                        return Some(c);
                    }
                }
                Mark::Done => {}
            }
        }
        path.pop();
        marks.insert(node, Mark::Done);
        None
    }

    let mut marks = BTreeMap::new();
    for &node in graph.keys() {
        if marks.get(node).copied().unwrap_or(Mark::Fresh) == Mark::Fresh {
            if let Some(c) = visit(node, graph, &mut marks, &mut Vec::new()) {
                return Some(c);
            }
        }
    }
    None
}
