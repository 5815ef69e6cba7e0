use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{Alternative, Grammar, GrammarError, Rule, SlotKind, Symbol, Weight};

/// Result of parsing a grammar file: the grammar plus the raw attribute
/// sections for the schema parser.
#[derive(Debug, Clone)]
pub struct ParsedGrammar {
    pub grammar: Grammar,
    pub label_section: Option<String>,
    pub length_section: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Section {
    Templates,
    Variables,
    Label,
    Length,
}

impl Section {
    fn from_header(line: &str) -> Option<Result<Section, String>> {
        let inner = line.strip_prefix('<')?.strip_suffix('>')?;
        Some(match inner {
            "templates" => Ok(Section::Templates),
            "variables" => Ok(Section::Variables),
            "label" => Ok(Section::Label),
            "length" => Ok(Section::Length),
            other => Err(format!("unknown section <{other}>")),
        })
    }
}

pub fn parse_grammar(source: &str) -> Result<ParsedGrammar, GrammarError> {
    let source_hash = hex::encode(Sha256::digest(source.as_bytes()));

    let mut sections: BTreeMap<Section, Vec<(usize, &str)>> = BTreeMap::new();
    let mut current: Option<Section> = None;
    for (idx, raw) in source.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = line.trim();
        if let Some(header) = Section::from_header(trimmed) {
            let section = header.map_err(GrammarError::MalformedSection)?;
            if sections.contains_key(&section) {
                return Err(GrammarError::MalformedSection(format!(
                    "duplicate section {trimmed}"
                )));
            }
            sections.insert(section, Vec::new());
            current = Some(section);
            continue;
        }
        match current {
            Some(section) => sections.get_mut(&section).unwrap().push((line_no, line)),
            None => {
                if !trimmed.is_empty() && !trimmed.starts_with('#') {
                    return Err(GrammarError::MalformedSection(format!(
                        "line {line_no}: content before the first section header"
                    )));
                }
            }
        }
    }

    let templates_src = sections
        .remove(&Section::Templates)
        .ok_or_else(|| GrammarError::MalformedSection("missing <templates>".into()))?;
    let variables_src = sections
        .remove(&Section::Variables)
        .ok_or_else(|| GrammarError::MalformedSection("missing <variables>".into()))?;

    let mut templates = Vec::new();
    for (line_no, line) in content_lines(&templates_src) {
        templates.push(parse_alternative(line, line_no)?);
    }
    if templates.is_empty() {
        return Err(GrammarError::MalformedSection(
            "<templates> has no templates".into(),
        ));
    }

    let mut rules = BTreeMap::new();
    for (line_no, line) in content_lines(&variables_src) {
        let rule = parse_rule(line, line_no)?;
        if rules.contains_key(&rule.lhs) {
            return Err(GrammarError::DuplicateRule(rule.lhs));
        }
        rules.insert(rule.lhs.clone(), rule);
    }

    let grammar = Grammar {
        templates,
        rules,
        source_hash,
    };
    grammar.validate()?;

    let join = |lines: Vec<(usize, &str)>| {
        lines
            .into_iter()
            .map(|(_, l)| l)
            .collect::<Vec<_>>()
            .join("\n")
    };
    Ok(ParsedGrammar {
        grammar,
        label_section: sections.remove(&Section::Label).map(join),
        length_section: sections.remove(&Section::Length).map(join),
    })
}

fn content_lines<'a>(lines: &'a [(usize, &'a str)]) -> impl Iterator<Item = (usize, &'a str)> {
    lines.iter().copied().filter_map(|(n, l)| {
        let t = l.trim();
        (!t.is_empty() && !t.starts_with('#')).then_some((n, t))
    })
}

fn parse_rule(line: &str, line_no: usize) -> Result<Rule, GrammarError> {
    let malformed = |message: &str| GrammarError::MalformedLine {
        line: line_no,
        message: message.to_string(),
    };
    let rest = line
        .strip_prefix('[')
        .ok_or_else(|| malformed("rule must start with [NAME]:"))?;
    let close = rest.find(']').ok_or_else(|| malformed("unclosed ["))?;
    let lhs = &rest[..close];
    check_name(lhs).map_err(|m| malformed(&m))?;
    if SlotKind::from_token(lhs).is_some() {
        return Err(GrammarError::ReservedLhs(lhs.to_string()));
    }
    let body = rest[close + 1..]
        .trim_start()
        .strip_prefix(':')
        .ok_or_else(|| malformed("expected ':' after rule name"))?;
    let alternatives = body
        .split('|')
        .map(|alt| parse_alternative(alt, line_no))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Rule {
        lhs: lhs.to_string(),
        alternatives,
    })
}

fn check_name(name: &str) -> Result<(), String> {
    let mut chars = name.chars();
    let ok = matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '-');
    if ok {
        Ok(())
    } else {
        Err(format!("invalid nonterminal name [{name}]"))
    }
}

fn parse_alternative(text: &str, line_no: usize) -> Result<Alternative, GrammarError> {
    let mut body = text.trim();
    let mut weight = Weight::from_integer(1);
    let (head, last) = body.rsplit_once(char::is_whitespace).unwrap_or(("", body));
    if let Some(w) = last.strip_prefix('*') {
        weight = parse_weight(w).ok_or(GrammarError::NonPositiveWeight(line_no))?;
        body = head.trim_end();
    }
    if body.is_empty() {
        return Err(GrammarError::EmptyAlternative(line_no));
    }
    Ok(Alternative {
        rhs: parse_symbols(body, line_no)?,
        weight,
    })
}

fn parse_symbols(body: &str, line_no: usize) -> Result<Vec<Symbol>, GrammarError> {
    let mut symbols = Vec::new();
    let mut rest = body;
    while !rest.is_empty() {
        match rest.find('[') {
            Some(0) => {
                let close = rest.find(']').ok_or_else(|| GrammarError::MalformedLine {
                    line: line_no,
                    message: "unclosed [".into(),
                })?;
                let name = &rest[1..close];
                check_name(name).map_err(|message| GrammarError::MalformedLine {
                    line: line_no,
                    message,
                })?;
                symbols.push(match SlotKind::from_token(name) {
                    Some(kind) => Symbol::Slot(kind),
                    None => Symbol::Nonterminal(name.to_string()),
                });
                rest = &rest[close + 1..];
            }
            Some(open) => {
                push_terminal(&mut symbols, &rest[..open], line_no)?;
                rest = &rest[open..];
            }
            None => {
                push_terminal(&mut symbols, rest, line_no)?;
                rest = "";
            }
        }
    }
    Ok(symbols)
}

fn push_terminal(
    symbols: &mut Vec<Symbol>,
    text: &str,
    line_no: usize,
) -> Result<(), GrammarError> {
    if text.contains(']') {
        return Err(GrammarError::MalformedLine {
            line: line_no,
            message: "stray ]".into(),
        });
    }
    symbols.push(Symbol::Terminal(text.to_string()));
    Ok(())
}

/// Accepts `3`, `3/2` and `0.25`.
fn parse_weight(text: &str) -> Option<Weight> {
    let w = if let Some((n, d)) = text.split_once('/') {
        let (n, d) = (n.parse::<u64>().ok()?, d.parse::<u64>().ok()?);
        if d == 0 {
            return None;
        }
        Weight::new(n, d)
    } else if let Some((int, frac)) = text.split_once('.') {
        if frac.len() > 12 || !frac.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let denom = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
        let frac: u64 = if frac.is_empty() {
            0
        } else {
            frac.parse().ok()?
        };
        Weight::new(int.checked_mul(denom)?.checked_add(frac)?, denom)
    } else {
        Weight::from_integer(text.parse().ok()?)
    };
    (*w.numer() > 0).then_some(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wrap(templates: &str, variables: &str) -> String {
        format!("<templates>\n{templates}\n<variables>\n{variables}\n")
    }

    #[test]
    fn parses_documented_line_syntax() {
        let src = wrap(
            "[PLS] write a [TEXT-FORM] [LABEL-SEG] [LEN].",
            "[PLS]: please | kindly\n[TEXT-FORM]: [DOMAIN]\n[LABEL-SEG]: with a [LABEL] [LABEL-NAME]",
        );
        let parsed = parse_grammar(&src).unwrap();
        let g = &parsed.grammar;
        assert_eq!(g.templates.len(), 1);
        let pls = g.rule("PLS").unwrap();
        assert_eq!(pls.alternatives.len(), 2);
        assert_eq!(pls.alternatives[0].weight, pls.alternatives[1].weight);
        assert_eq!(
            pls.alternatives[1].rhs,
            vec![Symbol::Terminal("kindly".into())]
        );
        assert_eq!(
            g.templates[0].rhs[..3],
            [
                Symbol::Nonterminal("PLS".into()),
                Symbol::Terminal(" write a ".into()),
                Symbol::Nonterminal("TEXT-FORM".into()),
            ]
        );
        assert_eq!(g.source_hash.len(), 64);
        assert!(parsed.label_section.is_none());
    }

    #[test]
    fn dangling_reference() {
        let src = wrap("[HEAD-FORM] a [LABEL] [LEN]", "[PLS]: please");
        assert_eq!(
            parse_grammar(&src).unwrap_err(),
            GrammarError::DanglingNonterminal("HEAD-FORM".into())
        );
    }

    #[test]
    fn weight_suffix() {
        let src = wrap("[V] [LABEL] [LEN]", "[V]: generate *3 | write");
        let g = parse_grammar(&src).unwrap().grammar;
        let probs = g.rule("V").unwrap().probabilities();
        assert_eq!(probs[0].to_string(), "3/4");
        assert_eq!(probs[1].to_string(), "1/4");
        assert_eq!(parse_weight("0.25"), Some(Weight::new(1, 4)));
        assert_eq!(parse_weight("3/6"), Some(Weight::new(1, 2)));
        assert_eq!(parse_weight("0"), None);
        assert_eq!(parse_weight("-1"), None);
    }

    #[test]
    fn error_cases() {
        let zero = wrap("[V] [LABEL] [LEN]", "[V]: a *0 | b");
        assert_eq!(
            parse_grammar(&zero).unwrap_err(),
            GrammarError::NonPositiveWeight(4)
        );
        let empty = wrap("[V] [LABEL] [LEN]", "[V]: a | | b");
        assert_eq!(
            parse_grammar(&empty).unwrap_err(),
            GrammarError::EmptyAlternative(4)
        );
        let missing = "<templates>\n[LABEL] [LEN]\n";
        assert!(matches!(
            parse_grammar(missing).unwrap_err(),
            GrammarError::MalformedSection(_)
        ));
        let dup = "<templates>\n[LABEL] [LEN]\n<variables>\n<templates>\nx\n";
        assert!(matches!(
            parse_grammar(dup).unwrap_err(),
            GrammarError::MalformedSection(_)
        ));
        let reserved = wrap("[LABEL] [LEN]", "[LABEL]: x");
        assert_eq!(
            parse_grammar(&reserved).unwrap_err(),
            GrammarError::ReservedLhs("LABEL".into())
        );
        let dup_rule = wrap("[A] [LABEL] [LEN]", "[A]: x\n[A]: y");
        assert_eq!(
            parse_grammar(&dup_rule).unwrap_err(),
            GrammarError::DuplicateRule("A".into())
        );
        let lower = wrap("[a] [LABEL] [LEN]", "");
        assert!(matches!(
            parse_grammar(&lower).unwrap_err(),
            GrammarError::MalformedLine { .. }
        ));
    }

    #[test]
    fn termination_checks() {
        let unit_cycle = wrap("[A] [LABEL] [LEN]", "[A]: [B] | x\n[B]: [A]");
        assert!(matches!(
            parse_grammar(&unit_cycle).unwrap_err(),
            GrammarError::CycleWithoutEscape(names) if names == vec!["A".to_string(), "B".to_string()]
        ));
        let no_escape = wrap("[A] [LABEL] [LEN]", "[A]: x [A] | y [A]");
        assert_eq!(
            parse_grammar(&no_escape).unwrap_err(),
            GrammarError::CycleWithoutEscape(vec!["A".into()])
        );
        let escape = wrap("[A] [LABEL] [LEN]", "[A]: x [A] | y");
        assert!(parse_grammar(&escape).is_ok());
    }

    #[test]
    fn slot_coverage_required() {
        let src = wrap("[LABEL] only", "");
        assert_eq!(
            parse_grammar(&src).unwrap_err(),
            GrammarError::MissingSlotCoverage(SlotKind::LengthValue)
        );
    }

    #[test]
    fn comments_crlf_and_passthrough_sections() {
        let src = "# header comment\r\n<length>\r\n0: short\r\n43: long\r\n<templates>\r\n# a comment\r\n\r\n[LABEL] [LEN]\r\n<variables>\r\n<label>\r\n0: a, b\r\n";
        let parsed = parse_grammar(src).unwrap();
        assert_eq!(parsed.grammar.templates.len(), 1);
        assert_eq!(parsed.label_section.as_deref(), Some("0: a, b\n"));
        assert_eq!(parsed.length_section.as_deref(), Some("0: short\n43: long"));
    }

    #[test]
    fn serialize_round_trip() {
        let src = wrap(
            "[PLS] write a [TEXT-FORM] [LABEL-SEG]. *2\nGive me [LEN] text.",
            "[PLS]: please *3/2 | kindly\n[TEXT-FORM]: [DOMAIN]\n[LABEL-SEG]: with a [LABEL] [LABEL-NAME] | about [LABEL]",
        );
        let g = parse_grammar(&src).unwrap().grammar;
        let again = parse_grammar(&g.to_source()).unwrap().grammar;
        assert!(g.same_structure(&again));
    }
}
