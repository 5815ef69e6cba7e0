//! Token counting and command word splitting.

/// Pluggable token-counting scheme. Length levels are only meaningful
/// relative to the tokenizer that produced their cutoffs.
pub trait Tokenizer: Send + Sync {
    fn id(&self) -> &str;
    fn tokenize(&self, text: &str) -> Vec<String>;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Splits on Unicode whitespace. Identifier `ws`.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn id(&self) -> &str {
        "ws"
    }

    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_string).collect()
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

pub fn tokenizer_for(id: &str) -> Option<Box<dyn Tokenizer>> {
    match id {
        "ws" => Some(Box::new(WhitespaceTokenizer)),
        _ => None,
    }
}

/// Lowercased words of a command with surrounding punctuation stripped.
/// Internal hyphens and apostrophes are kept ("medium-length").
pub fn command_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|w| {
            let w = w.trim_matches(|c: char| !c.is_alphanumeric());
            (!w.is_empty()).then(|| w.to_lowercase())
        })
        .collect()
}

/// Case-folded, whitespace-normalized form used for verbalizer matching.
pub fn normalize_phrase(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_words_strip_punctuation() {
        assert_eq!(
            command_words("Please write an AG news report, medium-length!"),
            [
                "please",
                "write",
                "an",
                "ag",
                "news",
                "report",
                "medium-length"
            ]
        );
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_phrase("  Sporting \t Events "), "sporting events");
        assert_eq!(WhitespaceTokenizer.count(" a  b\nc "), 3);
    }
}
