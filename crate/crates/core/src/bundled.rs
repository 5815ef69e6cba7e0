//! Grammars and schema sidecars shipped with the crate, by name.

use crate::synthetic;

pub const AG_NEWS_GRAMMAR: &str = include_str!("../data/ag_news.grammar");
pub const AG_NEWS_META: &str = include_str!("../data/ag_news.meta.json");

pub const NAMES: [&str; 5] = ["synthetic", "t20", "t40", "heldout20", "ag_news"];

/// Grammar source and schema sidecar of a bundled grammar.
pub fn grammar(name: &str) -> Option<(&'static str, &'static str)> {
    Some(match name {
        "synthetic" => (synthetic::GRAMMAR, synthetic::META),
        "t20" => (synthetic::T20, synthetic::META),
        "t40" => (synthetic::T40, synthetic::META),
        "heldout20" => (synthetic::HELDOUT20, synthetic::META),
        "ag_news" => (AG_NEWS_GRAMMAR, AG_NEWS_META),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_grammar;
    use crate::schema::{parse_schema, SchemaMeta};

    #[test]
    fn every_bundle_parses() {
        for name in NAMES {
            let (g, meta) = grammar(name).unwrap();
            let parsed = parse_grammar(g).unwrap();
            let meta: SchemaMeta = serde_json::from_str(meta).unwrap();
            if let (Some(l), Some(m)) = (&parsed.label_section, &parsed.length_section) {
                parse_schema(l, m, &meta).unwrap();
            }
        }
        assert!(grammar("nope").is_none());
    }
}
