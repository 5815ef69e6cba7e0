//! Desk-scale reference models behind the decoding interfaces.

pub mod align;
pub mod conditional;
pub mod nb;
pub mod ngram;
pub mod vocab;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use align::{train_alignment, AlignConfig, AlignExample, AlignmentModel};
pub use conditional::{train_conditional, train_conditional_on, ConditionalConfig, ConditionalLm};
pub use nb::{train_binary_heads, train_nb, BinaryHeads, NaiveBayes};
pub use ngram::{train_ngram, NGramLm};
pub use vocab::{TokenId, Vocab};

pub const FORMAT_VERSION: u32 = 1;

/// Function words ignored when a command conditions a model.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "any", "as", "at", "be", "by", "can", "could", "for", "from",
    "give", "has", "have", "i", "in", "is", "it", "its", "kindly", "me", "my", "of", "on", "one",
    "please", "some", "that", "the", "this", "to", "us", "was", "which", "whose", "with", "would",
    "you", "your",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("class {0} has no training examples")]
    MissingClassExamples(usize),
    #[error("training pairs carry a single label")]
    SingleClassData,
    #[error("io error: {0}")]
    Io(String),
    #[error("bad model file: {0}")]
    Format(String),
}

/// On-disk wrapper for any trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile<M> {
    pub format_version: u32,
    pub kind: String,
    /// Hash of the data the model was trained on.
    pub data_hash: String,
    pub model: M,
}

impl<M: Serialize + DeserializeOwned> ModelFile<M> {
    pub fn new(kind: &str, data_hash: &str, model: M) -> Self {
        ModelFile {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            data_hash: data_hash.to_string(),
            model,
        }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        serde_json::to_string(self).map_err(|e| ModelError::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json()?).map_err(|e| ModelError::Io(e.to_string()))
    }

    /// Parse and check the version and kind.
    pub fn from_json(json: &str, kind: &str) -> Result<Self, ModelError> {
        let f: Self = serde_json::from_str(json).map_err(|e| ModelError::Format(e.to_string()))?;
        if f.format_version != FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported version {}",
                f.format_version
            )));
        }
        if f.kind != kind {
            return Err(ModelError::Format(format!(
                "expected a {kind} model, found {}",
                f.kind
            )));
        }
        Ok(f)
    }

    pub fn load(path: &Path, kind: &str) -> Result<Self, ModelError> {
        let json = std::fs::read_to_string(path).map_err(|e| ModelError::Io(e.to_string()))?;
        Self::from_json(&json, kind)
    }
}

/// Serde adapter writing a map with non-string keys as a list of pairs.
pub(crate) mod map_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(
        m: &BTreeMap<K, V>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

/// Peek at the kind of a saved model without decoding its payload.
pub fn model_kind(json: &str) -> Result<String, ModelError> {
    #[derive(Deserialize)]
    struct Head {
        kind: String,
    }
    serde_json::from_str::<Head>(json)
        .map(|h| h.kind)
        .map_err(|e| ModelError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trips_bit_exact() {
        let v = Vocab::build(["a", "b"]);
        let corpus = vec![v.encode(&["a", "b"]), v.encode(&["b"])];
        let lm = train_ngram(&corpus, &v, 2, 0.1).unwrap();
        let f = ModelFile::new("ngram", "abc", lm);
        let json = f.to_json().unwrap();
        let back = ModelFile::<NGramLm>::from_json(&json, "ngram").unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_json().unwrap(), json);
        assert_eq!(model_kind(&json).unwrap(), "ngram");
        assert!(matches!(
            ModelFile::<NGramLm>::from_json(&json, "nb"),
            Err(ModelError::Format(_))
        ));
    }
}
