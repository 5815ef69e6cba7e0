//! Labeled corpora, generalization splits, command and pair datasets.

mod mixture;
mod pairs;
mod split;

pub use mixture::{plan_mixture, sample_mixture, MixtureComponent, MixturePlan};
pub use pairs::{
    make_command_dataset, make_pair_dataset, CommandExample, FlipMask, PairExample, PrefixPolicy,
    EOS_TOKEN,
};
pub use split::{build_split, Ratios, SplitBundle, SplitKind, SplitManifest, TemplateSetId};

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::command::CommandError;
use crate::schema::{AttrSpec, AttributeSchema};
use crate::tokenize::{tokenizer_for, Tokenizer};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorpusError {
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("record {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("{0}")]
    Io(String),
    #[error("unsupported tokenizer {0:?}")]
    UnknownTokenizer(String),
    #[error("split ratios must be positive and sum to 1")]
    InvalidRatios,
    #[error("stratum {0} is empty")]
    EmptyStratum(String),
    #[error("label id {0} does not exist")]
    UnknownClass(usize),
    #[error("no attribute of {0} can be flipped")]
    CannotFlip(String),
    #[error("example {id}: {source}")]
    Command { id: String, source: CommandError },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub token_count: usize,
    pub label_id: usize,
    pub length_id: usize,
    pub source: String,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        label_id: usize,
        source: impl Into<String>,
        schema: &AttributeSchema,
        tokenizer: &dyn Tokenizer,
    ) -> Self {
        let text = text.into();
        let token_count = tokenizer.count(&text);
        Example {
            id: id.into(),
            length_id: schema.length_level_of(token_count),
            text,
            token_count,
            label_id,
            source: source.into(),
        }
    }

    pub fn attrs(&self) -> AttrSpec {
        AttrSpec::both(self.label_id, self.length_id)
    }
}

/// Reassign every example's length level under `schema`'s cutoffs.
pub fn assign_lengths(examples: &mut [Example], schema: &AttributeSchema) {
    for e in examples {
        e.length_id = schema.length_level_of(e.token_count);
    }
}

/// SHA-256 over ids, labels and texts, in order.
pub fn examples_hash(examples: &[Example]) -> String {
    let mut h = Sha256::new();
    for e in examples {
        h.update(e.id.as_bytes());
        h.update([0]);
        h.update(e.label_id.to_le_bytes());
        h.update(e.text.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub examples: Vec<Example>,
    /// Records removed by the `max_tokens` filter.
    pub dropped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

fn resolve_label(schema: &AttributeSchema, raw: &str) -> Result<usize, CorpusError> {
    let raw = raw.trim();
    if let Ok(id) = raw.parse::<usize>() {
        return if id < schema.num_labels() {
            Ok(id)
        } else {
            Err(CorpusError::UnknownLabel(raw.to_string()))
        };
    }
    schema
        .label_by_name(raw)
        .ok_or_else(|| CorpusError::UnknownLabel(raw.to_string()))
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<serde_json::Value>,
    text: String,
    label: serde_json::Value,
}

fn raw_label(v: &serde_json::Value, line: usize) -> Result<String, CorpusError> {
    match v {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) => Ok(n.to_string()),
        _ => Err(CorpusError::MalformedRecord {
            line,
            message: "label must be a string or an integer".into(),
        }),
    }
}

/// Parse a corpus held in memory. Ids default to `{source}-{record index}`.
pub fn ingest_str(
    content: &str,
    format: CorpusFormat,
    schema: &AttributeSchema,
    source: &str,
    max_tokens: Option<usize>,
) -> Result<IngestReport, CorpusError> {
    let tokenizer = tokenizer_for(&schema.tokenizer_id)
        .ok_or_else(|| CorpusError::UnknownTokenizer(schema.tokenizer_id.clone()))?;
    let mut rows: Vec<(usize, Option<String>, String, String)> = Vec::new();
    match format {
        CorpusFormat::Jsonl => {
            for (i, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: RawRecord =
                    serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                let id = rec.id.map(|v| match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                });
                rows.push((i + 1, id, rec.text, raw_label(&rec.label, i + 1)?));
            }
        }
        CorpusFormat::Csv => {
            let mut reader = csv::Reader::from_reader(content.as_bytes());
            let headers = reader
                .headers()
                .map_err(|e| CorpusError::MalformedRecord {
                    line: 1,
                    message: e.to_string(),
                })?
                .clone();
            let col = |name: &str| {
                headers
                    .iter()
                    .position(|h| h.trim().eq_ignore_ascii_case(name))
            };
            let (Some(text_col), Some(label_col)) = (col("text"), col("label")) else {
                return Err(CorpusError::MalformedRecord {
                    line: 1,
                    message: "header must contain text and label columns".into(),
                });
            };
            let id_col = col("id");
            for (i, record) in reader.records().enumerate() {
                let line = i + 2;
                let record = record.map_err(|e| CorpusError::MalformedRecord {
                    line,
                    message: e.to_string(),
                })?;
                let field = |c: usize| {
                    record
                        .get(c)
                        .map(str::to_string)
                        .ok_or(CorpusError::MalformedRecord {
                            line,
                            message: "missing column".into(),
                        })
                };
                let id = id_col.and_then(|c| record.get(c).map(str::to_string));
                rows.push((line, id, field(text_col)?, field(label_col)?));
            }
        }
    }

    let mut examples = Vec::with_capacity(rows.len());
    let mut dropped = 0;
    for (index, (_, id, text, label)) in rows.into_iter().enumerate() {
        let label_id = resolve_label(schema, &label)?;
        let id = id.unwrap_or_else(|| format!("{source}-{index}"));
        let e = Example::new(id, text, label_id, source, schema, tokenizer.as_ref());
        if max_tokens.is_some_and(|m| e.token_count > m) {
            dropped += 1;
            continue;
        }
        examples.push(e);
    }
    if examples.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(IngestReport { examples, dropped })
}

pub fn ingest(
    path: &Path,
    schema: &AttributeSchema,
    source: &str,
    max_tokens: Option<usize>,
) -> Result<IngestReport, CorpusError> {
    let content = fs::read_to_string(path)
        .map_err(|e| CorpusError::Io(format!("{}: {e}", path.display())))?;
    ingest_str(
        &content,
        CorpusFormat::from_path(path),
        schema,
        source,
        max_tokens,
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::schema::{derive_balanced_cutoffs, parse_schema, SchemaMeta};

    pub(crate) fn ag_schema() -> AttributeSchema {
        parse_schema(
            "0: world, international\n1: sports, sporting events\n2: business, commerce\n3: science",
            "0: short\n43: medium, medium-length\n56: long",
            &SchemaMeta {
                label_attr_names: vec!["topic".into()],
                length_attr_names: vec!["length".into()],
                domains: vec!["AG news report".into()],
                tokenizer_id: "ws".into(),
            },
        )
        .unwrap()
    }

    #[test]
    fn jsonl_with_names_and_ids() {
        let s = ag_schema();
        let r = ingest_str(
            "{\"text\":\"Stocks fell sharply\",\"label\":\"business\"}\n\n{\"text\":\"a b\",\"label\":1,\"id\":\"x7\"}\n",
            CorpusFormat::Jsonl,
            &s,
            "ag",
            None,
        )
        .unwrap();
        assert_eq!(r.examples.len(), 2);
        assert_eq!(r.examples[0].label_id, 2);
        assert_eq!(r.examples[0].token_count, 3);
        assert_eq!(r.examples[0].id, "ag-0");
        assert_eq!(r.examples[1].id, "x7");
    }

    #[test]
    fn ingest_errors() {
        let s = ag_schema();
        assert_eq!(
            ingest_str(
                "{\"text\":\"x\",\"label\":\"weather\"}",
                CorpusFormat::Jsonl,
                &s,
                "ag",
                None
            )
            .unwrap_err(),
            CorpusError::UnknownLabel("weather".into())
        );
        assert_eq!(
            ingest_str(
                "{\"text\":\"x\",\"label\":9}",
                CorpusFormat::Jsonl,
                &s,
                "ag",
                None
            )
            .unwrap_err(),
            CorpusError::UnknownLabel("9".into())
        );
        assert!(matches!(
            ingest_str("{\"text\":1}", CorpusFormat::Jsonl, &s, "ag", None).unwrap_err(),
            CorpusError::MalformedRecord { line: 1, .. }
        ));
        assert_eq!(
            ingest_str("\n", CorpusFormat::Jsonl, &s, "ag", None).unwrap_err(),
            CorpusError::EmptyCorpus
        );
    }

    #[test]
    fn csv_and_max_tokens() {
        let s = ag_schema();
        let r = ingest_str(
            "label,text\nsports,\"one, two three\"\n0,a b c d e\n",
            CorpusFormat::Csv,
            &s,
            "csv",
            Some(4),
        )
        .unwrap();
        assert_eq!(r.examples.len(), 1);
        assert_eq!(r.dropped, 1);
        assert_eq!(r.examples[0].label_id, 1);
        assert_eq!(r.examples[0].text, "one, two three");
    }

    #[test]
    fn rebucketing_after_balanced_cutoffs() {
        let s = parse_schema(
            "0: a\n1: b",
            "0: short\n5: medium\n9: long",
            &SchemaMeta {
                label_attr_names: vec!["topic".into()],
                length_attr_names: vec!["length".into()],
                domains: vec!["text".into()],
                tokenizer_id: "ws".into(),
            },
        )
        .unwrap();
        let corpus: String = [10, 20, 30, 40, 50, 60]
            .iter()
            .map(|n| format!("{{\"text\":\"{}\",\"label\":0}}\n", vec!["w"; *n].join(" ")))
            .collect();
        let mut r = ingest_str(&corpus, CorpusFormat::Jsonl, &s, "c", None).unwrap();
        let counts: Vec<usize> = r.examples.iter().map(|e| e.token_count).collect();
        let cutoffs = derive_balanced_cutoffs(&counts, 3).unwrap();
        let s2 = s.with_cutoffs(&cutoffs).unwrap();
        assign_lengths(&mut r.examples, &s2);
        let mut per_level = [0; 3];
        for e in &r.examples {
            per_level[e.length_id] += 1;
        }
        assert_eq!(per_level, [2, 2, 2]);
    }
}
