//! Attribute universe: label classes, length levels and their verbalizers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenize::{command_words, normalize_phrase};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchemaError {
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate id {0}")]
    DuplicateId(usize),
    #[error("label ids must be contiguous from 0")]
    NonContiguousIds,
    #[error("empty verbalizer list: {0}")]
    EmptyVerbalizerList(String),
    #[error("length cutoffs must start at 0 and increase strictly")]
    CutoffNotIncreasing,
    #[error("verbalizer {0:?} is listed twice for {1}")]
    DuplicateVerbalizer(String, String),
    #[error("verbalizer {phrase:?} belongs to both {first} and {second}")]
    AmbiguousVerbalizer {
        phrase: String,
        first: String,
        second: String,
    },
    #[error("unknown verbalizer {0:?}")]
    UnknownVerbalizer(String),
    #[error("fewer distinct token counts than requested length levels")]
    DegenerateDistribution,
    #[error("attribute spec must name a label, a length or both")]
    EmptyAttrSpec,
    #[error("attribute {0} out of range")]
    OutOfRange(String),
    #[error("unsupported tokenizer {0:?}")]
    UnknownTokenizer(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelClass {
    pub id: usize,
    pub canonical: String,
    pub verbalizers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthLevel {
    pub id: usize,
    /// Inclusive lower bound on token count.
    pub cutoff: usize,
    pub verbalizers: Vec<String>,
}

/// Attribute-name and domain verbalizers, read from a JSON sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaMeta {
    pub label_attr_names: Vec<String>,
    pub length_attr_names: Vec<String>,
    pub domains: Vec<String>,
    #[serde(default = "default_tokenizer")]
    pub tokenizer_id: String,
}

fn default_tokenizer() -> String {
    "ws".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub labels: Vec<LabelClass>,
    pub lengths: Vec<LengthLevel>,
    pub label_attr_names: Vec<String>,
    pub length_attr_names: Vec<String>,
    pub domains: Vec<String>,
    pub tokenizer_id: String,
}

/// Target attributes: a label class, a length level, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttrSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_id: Option<usize>,
}

impl AttrSpec {
    pub fn new(label_id: Option<usize>, length_id: Option<usize>) -> Result<Self, SchemaError> {
        if label_id.is_none() && length_id.is_none() {
            return Err(SchemaError::EmptyAttrSpec);
        }
        Ok(AttrSpec {
            label_id,
            length_id,
        })
    }

    pub fn both(label_id: usize, length_id: usize) -> Self {
        AttrSpec {
            label_id: Some(label_id),
            length_id: Some(length_id),
        }
    }

    pub fn label(label_id: usize) -> Self {
        AttrSpec {
            label_id: Some(label_id),
            length_id: None,
        }
    }

    pub fn length(length_id: usize) -> Self {
        AttrSpec {
            label_id: None,
            length_id: Some(length_id),
        }
    }
}

/// The entity a single verbalizer names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttrFragment {
    Label(usize),
    Length(usize),
}

fn parse_lines(section: &str) -> Result<Vec<(usize, usize, Vec<String>)>, SchemaError> {
    let mut out = Vec::new();
    for (idx, raw) in section.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line
            .split_once(':')
            .ok_or_else(|| SchemaError::MalformedLine {
                line: idx + 1,
                message: "expected `key: v1, v2, ...`".into(),
            })?;
        let key: usize = key.trim().parse().map_err(|_| SchemaError::MalformedLine {
            line: idx + 1,
            message: format!("{:?} is not a non-negative integer", key.trim()),
        })?;
        let verbalizers: Vec<String> = rest
            .split(',')
            .map(|v| v.split_whitespace().collect::<Vec<_>>().join(" "))
            .filter(|v| !v.is_empty())
            .collect();
        if verbalizers.is_empty() {
            return Err(SchemaError::EmptyVerbalizerList(format!(
                "line {}",
                idx + 1
            )));
        }
        out.push((idx + 1, key, verbalizers));
    }
    Ok(out)
}

fn check_unique_within(owner: &str, verbalizers: &[String]) -> Result<(), SchemaError> {
    let mut seen = BTreeMap::new();
    for v in verbalizers {
        if seen.insert(normalize_phrase(v), ()).is_some() {
            return Err(SchemaError::DuplicateVerbalizer(
                v.clone(),
                owner.to_string(),
            ));
        }
    }
    Ok(())
}

pub fn parse_schema(
    label_section: &str,
    length_section: &str,
    meta: &SchemaMeta,
) -> Result<AttributeSchema, SchemaError> {
    let mut by_id = BTreeMap::new();
    for (_, id, verbalizers) in parse_lines(label_section)? {
        if by_id.insert(id, verbalizers).is_some() {
            return Err(SchemaError::DuplicateId(id));
        }
    }
    if by_id.is_empty() {
        return Err(SchemaError::EmptyVerbalizerList("<label>".into()));
    }
    if by_id.keys().copied().ne(0..by_id.len()) {
        return Err(SchemaError::NonContiguousIds);
    }
    let labels = by_id
        .into_iter()
        .map(|(id, verbalizers)| LabelClass {
            id,
            canonical: verbalizers[0].clone(),
            verbalizers,
        })
        .collect();

    let mut lengths: Vec<LengthLevel> = Vec::new();
    for (_, cutoff, verbalizers) in parse_lines(length_section)? {
        let ok = match lengths.last() {
            None => cutoff == 0,
            Some(prev) => cutoff > prev.cutoff,
        };
        if !ok {
            return Err(SchemaError::CutoffNotIncreasing);
        }
        lengths.push(LengthLevel {
            id: lengths.len(),
            cutoff,
            verbalizers,
        });
    }
    if lengths.is_empty() {
        return Err(SchemaError::EmptyVerbalizerList("<length>".into()));
    }

    let schema = AttributeSchema {
        labels,
        lengths,
        label_attr_names: meta.label_attr_names.clone(),
        length_attr_names: meta.length_attr_names.clone(),
        domains: meta.domains.clone(),
        tokenizer_id: meta.tokenizer_id.clone(),
    };
    schema.validate()?;
    Ok(schema)
}

impl AttributeSchema {
    fn validate(&self) -> Result<(), SchemaError> {
        for (name, group) in [
            ("label attribute names", &self.label_attr_names),
            ("length attribute names", &self.length_attr_names),
            ("domains", &self.domains),
        ] {
            if group.is_empty() {
                return Err(SchemaError::EmptyVerbalizerList(name.to_string()));
            }
        }
        let mut owners: BTreeMap<String, String> = BTreeMap::new();
        let entities = self
            .labels
            .iter()
            .map(|c| (format!("label {}", c.canonical), &c.verbalizers))
            .chain(
                self.lengths
                    .iter()
                    .map(|l| (format!("length level {}", l.id), &l.verbalizers)),
            );
        for (owner, verbalizers) in entities {
            check_unique_within(&owner, verbalizers)?;
            for v in verbalizers {
                if let Some(first) = owners.insert(normalize_phrase(v), owner.clone()) {
                    return Err(SchemaError::AmbiguousVerbalizer {
                        phrase: v.clone(),
                        first,
                        second: owner,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn num_lengths(&self) -> usize {
        self.lengths.len()
    }

    pub fn label_by_name(&self, name: &str) -> Option<usize> {
        let key = normalize_phrase(name);
        self.labels
            .iter()
            .find(|c| normalize_phrase(&c.canonical) == key)
            .map(|c| c.id)
    }

    pub fn check(&self, attrs: &AttrSpec) -> Result<(), SchemaError> {
        if attrs.label_id.is_none() && attrs.length_id.is_none() {
            return Err(SchemaError::EmptyAttrSpec);
        }
        if attrs.label_id.is_some_and(|l| l >= self.labels.len()) {
            return Err(SchemaError::OutOfRange(format!(
                "label {:?}",
                attrs.label_id
            )));
        }
        if attrs.length_id.is_some_and(|l| l >= self.lengths.len()) {
            return Err(SchemaError::OutOfRange(format!(
                "length {:?}",
                attrs.length_id
            )));
        }
        Ok(())
    }

    /// Highest level whose cutoff does not exceed `token_count`.
    pub fn length_level_of(&self, token_count: usize) -> usize {
        self.lengths
            .iter()
            .rposition(|l| l.cutoff <= token_count)
            .unwrap_or(0)
    }

    pub fn cutoffs(&self) -> Vec<usize> {
        self.lengths.iter().map(|l| l.cutoff).collect()
    }

    /// Same schema with new cutoffs for the existing length levels.
    pub fn with_cutoffs(&self, cutoffs: &[usize]) -> Result<Self, SchemaError> {
        if cutoffs.len() != self.lengths.len()
            || cutoffs.first() != Some(&0)
            || cutoffs.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(SchemaError::CutoffNotIncreasing);
        }
        let mut out = self.clone();
        for (level, &c) in out.lengths.iter_mut().zip(cutoffs) {
            level.cutoff = c;
        }
        Ok(out)
    }

    pub fn invert_verbalizer(&self, phrase: &str) -> Result<AttrFragment, SchemaError> {
        let key = normalize_phrase(phrase);
        if let Some(c) = self
            .labels
            .iter()
            .find(|c| c.verbalizers.iter().any(|v| normalize_phrase(v) == key))
        {
            return Ok(AttrFragment::Label(c.id));
        }
        if let Some(l) = self
            .lengths
            .iter()
            .find(|l| l.verbalizers.iter().any(|v| normalize_phrase(v) == key))
        {
            return Ok(AttrFragment::Length(l.id));
        }
        Err(SchemaError::UnknownVerbalizer(phrase.to_string()))
    }

    /// Every value verbalizer mentioned in `text`, leftmost-longest, on
    /// word boundaries.
    pub fn scan_verbalizers(&self, text: &str) -> Vec<AttrFragment> {
        let mut patterns: Vec<(Vec<String>, AttrFragment)> = Vec::new();
        for c in &self.labels {
            for v in &c.verbalizers {
                patterns.push((command_words(v), AttrFragment::Label(c.id)));
            }
        }
        for l in &self.lengths {
            for v in &l.verbalizers {
                patterns.push((command_words(v), AttrFragment::Length(l.id)));
            }
        }
        patterns.retain(|(p, _)| !p.is_empty());
        patterns.sort_by_key(|p| std::cmp::Reverse(p.0.len()));

        let words = command_words(text);
        let mut found = Vec::new();
        let mut i = 0;
        while i < words.len() {
            match patterns
                .iter()
                .find(|(p, _)| words[i..].starts_with(p.as_slice()))
            {
                Some((p, frag)) => {
                    found.push(*frag);
                    i += p.len();
                }
                None => i += 1,
            }
        }
        found
    }

    /// Attributes a command text expresses, or `None` if it mentions more
    /// than one value of the same attribute.
    pub fn recover_attrs(&self, text: &str) -> Option<AttrSpec> {
        let mut label = None;
        let mut length = None;
        for frag in self.scan_verbalizers(text) {
            match frag {
                AttrFragment::Label(id) => {
                    if label.replace(id).is_some() {
                        return None;
                    }
                }
                AttrFragment::Length(id) => {
                    if length.replace(id).is_some() {
                        return None;
                    }
                }
            }
        }
        AttrSpec::new(label, length).ok()
    }
}

/// Cutoffs that split `token_counts` into `n_len` buckets of balanced size.
///
/// `cutoffs[0] = 0`; `cutoffs[j]` is the smallest integer `c` with at least
/// `floor(j * N / n_len)` counts below `c`. When ties force a cutoff onto the
/// previous one it moves up past the next distinct value.
pub fn derive_balanced_cutoffs(
    token_counts: &[usize],
    n_len: usize,
) -> Result<Vec<usize>, SchemaError> {
    let mut sorted = token_counts.to_vec();
    sorted.sort_unstable();
    let mut distinct = sorted.clone();
    distinct.dedup();
    if n_len < 2 || sorted.len() < n_len || distinct.len() < n_len {
        return Err(SchemaError::DegenerateDistribution);
    }
    let n = sorted.len();
    let mut cutoffs = vec![0usize];
    for j in 1..n_len {
        let target = j * n / n_len;
        let mut c = if target == 0 {
            0
        } else {
            sorted[target - 1] + 1
        };
        let prev = *cutoffs.last().unwrap();
        if c <= prev {
            let v = distinct
                .iter()
                .find(|&&v| v >= prev)
                .ok_or(SchemaError::DegenerateDistribution)?;
            c = v + 1;
        }
        cutoffs.push(c);
    }
    if sorted.last().copied().unwrap_or(0) < *cutoffs.last().unwrap() {
        return Err(SchemaError::DegenerateDistribution);
    }
    Ok(cutoffs)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn meta() -> SchemaMeta {
        SchemaMeta {
            label_attr_names: vec!["topic".into()],
            length_attr_names: vec!["length".into()],
            domains: vec!["AG news report".into()],
            tokenizer_id: "ws".into(),
        }
    }

    fn ag() -> AttributeSchema {
        parse_schema(
            "0: world, international\n1: sports, sporting events\n2: business, commerce\n3: science/tech, technology",
            "0: short\n43: medium, medium-length\n56: long",
            &meta(),
        )
        .unwrap()
    }

    fn yelp_lengths() -> AttributeSchema {
        parse_schema(
            "0: very negative\n1: negative\n2: neutral\n3: positive\n4: very positive",
            "0: very short\n43: short\n72: medium-length\n104: long\n144: very long",
            &meta(),
        )
        .unwrap()
    }

    #[test]
    fn parses_label_and_length_sections() {
        let s = parse_schema(
            "0: world, international\n1: sports, sporting events",
            "0: short\n43: medium, medium-length\n56: long",
            &meta(),
        )
        .unwrap();
        assert_eq!(s.labels.len(), 2);
        assert_eq!(s.labels[1].verbalizers, ["sports", "sporting events"]);
        assert_eq!(s.labels[1].canonical, "sports");
        assert_eq!(s.cutoffs(), [0, 43, 56]);
        assert_eq!(yelp_lengths().cutoffs(), [0, 43, 72, 104, 144]);
    }

    #[test]
    fn length_levels() {
        let s = ag();
        assert_eq!(s.length_level_of(10), 0);
        assert_eq!(s.length_level_of(42), 0);
        assert_eq!(s.length_level_of(43), 1);
        assert_eq!(s.length_level_of(56), 2);
        assert_eq!(yelp_lengths().length_level_of(200), 4);
    }

    #[test]
    fn inversion() {
        let s = ag();
        assert_eq!(
            s.invert_verbalizer("Sporting  Events").unwrap(),
            AttrFragment::Label(1)
        );
        assert_eq!(
            s.invert_verbalizer("medium-length").unwrap(),
            AttrFragment::Length(1)
        );
        assert_eq!(
            s.invert_verbalizer("pizza").unwrap_err(),
            SchemaError::UnknownVerbalizer("pizza".into())
        );
    }

    #[test]
    fn scanning_commands() {
        let s = ag();
        assert_eq!(
            s.recover_attrs("Give me a medium-length AG news report about sporting events."),
            Some(AttrSpec::both(1, 1))
        );
        assert_eq!(
            s.recover_attrs("Write about commerce."),
            Some(AttrSpec::label(2))
        );
        assert_eq!(s.recover_attrs("Write about commerce and sports."), None);
        assert_eq!(s.recover_attrs("Write something."), None);
        let y = yelp_lengths();
        assert_eq!(
            y.scan_verbalizers("a very short and very negative review"),
            vec![AttrFragment::Length(0), AttrFragment::Label(0)]
        );
    }

    #[test]
    fn schema_errors() {
        let m = meta();
        assert_eq!(
            parse_schema("0: a\n0: b", "0: s", &m).unwrap_err(),
            SchemaError::DuplicateId(0)
        );
        assert_eq!(
            parse_schema("0: a\n2: b", "0: s", &m).unwrap_err(),
            SchemaError::NonContiguousIds
        );
        assert!(matches!(
            parse_schema("0: a\n1: ,", "0: s", &m).unwrap_err(),
            SchemaError::EmptyVerbalizerList(_)
        ));
        assert_eq!(
            parse_schema("0: a", "0: s\n10: m\n5: l", &m).unwrap_err(),
            SchemaError::CutoffNotIncreasing
        );
        assert_eq!(
            parse_schema("0: a", "3: s", &m).unwrap_err(),
            SchemaError::CutoffNotIncreasing
        );
        assert!(matches!(
            parse_schema("0: a, short\n1: b", "0: short", &m).unwrap_err(),
            SchemaError::AmbiguousVerbalizer { .. }
        ));
        let mut bad = m.clone();
        bad.domains.clear();
        assert!(matches!(
            parse_schema("0: a", "0: s", &bad).unwrap_err(),
            SchemaError::EmptyVerbalizerList(_)
        ));
    }

    #[test]
    fn degenerate_cutoffs() {
        assert_eq!(
            derive_balanced_cutoffs(&[7; 10], 2).unwrap_err(),
            SchemaError::DegenerateDistribution
        );
        // heavy ties push the second cutoff past the next distinct value
        let c = derive_balanced_cutoffs(&[0, 0, 0, 0, 0, 0, 0, 0, 1, 2], 3).unwrap();
        assert_eq!(c, [0, 1, 2]);
    }
}
