use std::fmt;

use serde::Serialize;

use super::{Grammar, SlotKind, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Diagnostic {
    /// A rule that no seed template can reach.
    UnreachableNonterminal(String),
    /// A seed template that produces no slots at all.
    SlotFreeTemplate(usize),
    /// A seed template with slots but neither a label nor a length value slot.
    MissingValueSlot(usize),
    /// A terminal with two consecutive spaces; `location` is a template
    /// index or rule name.
    DoubleSpace { location: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::UnreachableNonterminal(n) => write!(f, "warning: [{n}] is never used"),
            Diagnostic::SlotFreeTemplate(i) => write!(f, "warning: template {i} has no slots"),
            Diagnostic::MissingValueSlot(i) => {
                write!(f, "warning: template {i} has no [LABEL] or [LEN] slot")
            }
            Diagnostic::DoubleSpace { location } => {
                write!(f, "warning: double space in terminal of {location}")
            }
        }
    }
}

pub fn lint_grammar(g: &Grammar) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let reachable = g.reachable();
    for name in g.rules.keys() {
        if !reachable.contains(name) {
            out.push(Diagnostic::UnreachableNonterminal(name.clone()));
        }
    }
    for i in 0..g.templates.len() {
        let slots = g.template_slots(i);
        if slots.is_empty() {
            out.push(Diagnostic::SlotFreeTemplate(i));
        } else if !slots.contains(&SlotKind::LabelValue) && !slots.contains(&SlotKind::LengthValue)
        {
            out.push(Diagnostic::MissingValueSlot(i));
        }
    }
    let has_double = |rhs: &[Symbol]| {
        rhs.iter()
            .any(|s| matches!(s, Symbol::Terminal(t) if t.contains("  ")))
    };
    for (i, t) in g.templates.iter().enumerate() {
        if has_double(&t.rhs) {
            out.push(Diagnostic::DoubleSpace {
                location: format!("template {i}"),
            });
        }
    }
    for rule in g.rules.values() {
        if rule.alternatives.iter().any(|a| has_double(&a.rhs)) {
            out.push(Diagnostic::DoubleSpace {
                location: format!("[{}]", rule.lhs),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_grammar;

    fn grammar(templates: &str, variables: &str) -> Grammar {
        parse_grammar(&format!(
            "<templates>\n{templates}\n<variables>\n{variables}\n"
        ))
        .unwrap()
        .grammar
    }

    #[test]
    fn unreachable_rule() {
        let g = grammar("[LABEL] [LEN]", "[UNUSED]: foo");
        assert_eq!(
            lint_grammar(&g),
            vec![Diagnostic::UnreachableNonterminal("UNUSED".into())]
        );
    }

    #[test]
    fn slot_free_and_value_free_templates() {
        let g = grammar("[LABEL] [LEN]\nhello there\nabout [DOMAIN]", "");
        assert_eq!(
            lint_grammar(&g),
            vec![
                Diagnostic::SlotFreeTemplate(1),
                Diagnostic::MissingValueSlot(2)
            ]
        );
    }

    #[test]
    fn double_space() {
        let g = grammar("[A] [LABEL] [LEN]", "[A]: a  b");
        assert_eq!(
            lint_grammar(&g),
            vec![Diagnostic::DoubleSpace {
                location: "[A]".into()
            }]
        );
    }
}
