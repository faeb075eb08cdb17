//! Pluggable token counting. The default counter approximates model
//! tokenizers by splitting on whitespace and treating each punctuation
//! character as its own token. The chunker and the gateway's context
//! window check share one counter so their token arithmetic agrees.

use std::sync::Arc;

/// Byte range of one token within the original text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        &text[self.start..self.end]
    }
}

pub trait TokenCounter: Send + Sync {
    /// Token boundaries in byte offsets, in document order.
    fn spans(&self, text: &str) -> Vec<TokenSpan>;

    fn count(&self, text: &str) -> usize {
        self.spans(text).len()
    }
}

pub type SharedCounter = Arc<dyn TokenCounter>;

/// Default approximation: a token is either a maximal run of alphanumeric
/// characters or a single non-whitespace punctuation character.
/// Splitting a text at any token boundary never changes how either side
/// tokenizes, which the chunker relies on.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordPunctCounter;

impl WordPunctCounter {
    pub fn shared() -> SharedCounter {
        Arc::new(WordPunctCounter)
    }
}

impl TokenCounter for WordPunctCounter {
    fn spans(&self, text: &str) -> Vec<TokenSpan> {
        let mut spans = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            if c.is_alphanumeric() {
                if word_start.is_none() {
                    word_start = Some(i);
                }
            } else {
                if let Some(start) = word_start.take() {
                    spans.push(TokenSpan { start, end: i });
                }
                if !c.is_whitespace() {
                    spans.push(TokenSpan {
                        start: i,
                        end: i + c.len_utf8(),
                    });
                }
            }
        }
        if let Some(start) = word_start {
            spans.push(TokenSpan {
                start,
                end: text.len(),
            });
        }
        spans
    }
}

/// Collects the token texts; mostly useful in tests.
pub fn token_strings(counter: &dyn TokenCounter, text: &str) -> Vec<String> {
    counter
        .spans(text)
        .iter()
        .map(|s| s.slice(text).to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_and_punct_are_separate_tokens() {
        let toks = token_strings(&WordPunctCounter, "money-bomb, coined in 2007.");
        assert_eq!(
            toks,
            vec!["money", "-", "bomb", ",", "coined", "in", "2007", "."]
        );
    }

    #[test]
    fn whitespace_only_counts_zero() {
        assert_eq!(WordPunctCounter.count("  \n\t "), 0);
    }

    #[test]
    fn unicode_words_stay_whole() {
        let toks = token_strings(&WordPunctCounter, "café über 42");
        assert_eq!(toks, vec!["café", "über", "42"]);
    }

    #[test]
    fn split_at_token_boundary_preserves_tokenization() {
        let text = "alpha beta. gamma,delta";
        let spans = WordPunctCounter.spans(text);
        for cut in 1..spans.len() {
            let left = &text[..spans[cut - 1].end];
            let right = &text[spans[cut].start..];
            let mut joined = token_strings(&WordPunctCounter, left);
            joined.extend(token_strings(&WordPunctCounter, right));
            assert_eq!(joined, token_strings(&WordPunctCounter, text));
        }
    }
}
