use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub type TokenId = u32;

pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const SEP: TokenId = 2;
pub const UNK: TokenId = 3;

pub const BOS_STR: &str = "<s>";
pub const EOS_STR: &str = "</s>";
pub const SEP_STR: &str = "<sep>";
pub const UNK_STR: &str = "<unk>";

/// Ordered token set with reserved ids 0..4 for BOS, EOS, SEP and UNK.
/// Remaining tokens are sorted, so a vocabulary depends only on its token set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn build<I, S>(tokens: I) -> Vocab
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let reserved = [BOS_STR, EOS_STR, SEP_STR, UNK_STR];
        let rest: BTreeSet<String> = tokens
            .into_iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| !reserved.contains(&t.as_str()))
            .collect();
        let all: Vec<String> = reserved.iter().map(|s| s.to_string()).chain(rest).collect();
        Vocab::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Space-joined text of `ids`, with a trailing EOS dropped.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        let ids = match ids.last() {
            Some(&EOS) => &ids[..ids.len() - 1],
            _ => ids,
        };
        ids.iter()
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_unknowns() {
        let v = Vocab::build(["b", "a", "a", "</s>"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("</s>"), EOS);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.decode(&[4, 5, EOS]), "a b");
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocab>(&json).unwrap(), v);
    }
}
