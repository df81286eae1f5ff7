//! Exact-answer localization.
//!
//! Maps an exact-answer string onto the generated token sequence using the
//! tokens' character offsets, derives the four key probing positions around
//! the span, and implements the first-occurrence correctness heuristic.
//!
//! All offsets are counted in Unicode scalar values (Rust `char`s), which is
//! what a Python producer gets from `str` indexing.

use serde::{Deserialize, Serialize};

use crate::data::GeneratedToken;
use crate::error::{Error, Result};

/// Inclusive range of generated-token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub first: usize,
    pub last: usize,
}

impl TokenSpan {
    pub fn new(first: usize, last: usize) -> Self {
        TokenSpan { first, last }
    }
}

/// Token indices probed around an exact answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyPositions {
    pub exact_before: Option<usize>,
    pub exact_first: usize,
    pub exact_last: usize,
    pub exact_after: Option<usize>,
}

impl KeyPositions {
    /// Resolves one of the reserved exact-answer position names.
    pub fn get(&self, name: &str) -> Option<usize> {
        match name {
            "exact_before" => self.exact_before,
            "exact_first" => Some(self.exact_first),
            "exact_last" => Some(self.exact_last),
            "exact_after" => self.exact_after,
            _ => None,
        }
    }
}

/// Lowercases, trims and collapses internal whitespace runs to one space.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Slices `text` by character (not byte) offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let byte_at = |idx: usize| -> Option<usize> {
        if idx == 0 {
            return Some(0);
        }
        text.char_indices()
            .map(|(b, _)| b)
            .chain(std::iter::once(text.len()))
            .nth(idx)
    };
    let b0 = byte_at(start)?;
    let b1 = byte_at(end)?;
    Some(&text[b0..b1])
}

/// Checks that every token range lies inside `answer` and that ranges are
/// well-formed and non-decreasing.
pub fn check_offsets(tokens: &[GeneratedToken], answer: &str) -> Result<()> {
    let n_chars = answer.chars().count();
    let mut prev_start = 0;
    for (i, tok) in tokens.iter().enumerate() {
        if tok.char_start > tok.char_end || tok.char_end > n_chars {
            return Err(Error::InconsistentOffsets(format!(
                "token {i} has range [{}, {}) in a {n_chars}-char answer",
                tok.char_start, tok.char_end
            )));
        }
        if tok.char_start < prev_start {
            return Err(Error::InconsistentOffsets(format!(
                "token {i} starts at {} before the previous token's start {prev_start}",
                tok.char_start
            )));
        }
        prev_start = tok.char_start;
    }
    Ok(())
}

/// Finds the tokens spelling the leftmost occurrence of `exact_answer`.
///
/// The span runs from the first token overlapping the match to the last
/// token overlapping it. Returns `Ok(None)` when the string does not occur.
pub fn locate_exact_span(
    tokens: &[GeneratedToken],
    generated_answer: &str,
    exact_answer: &str,
) -> Result<Option<TokenSpan>> {
    check_offsets(tokens, generated_answer)?;
    if exact_answer.is_empty() {
        return Ok(None);
    }
    let Some(byte_pos) = generated_answer.find(exact_answer) else {
        return Ok(None);
    };
    let match_start = generated_answer[..byte_pos].chars().count();
    let match_end = match_start + exact_answer.chars().count();

    let overlaps = |t: &GeneratedToken| t.char_start < match_end && t.char_end > match_start;
    let first = tokens.iter().position(overlaps);
    let last = tokens.iter().rposition(overlaps);
    Ok(match (first, last) {
        (Some(first), Some(last)) => Some(TokenSpan { first, last }),
        _ => None,
    })
}

/// Derives the before/first/last/after positions for a span.
pub fn key_positions(span: TokenSpan, num_generated: usize) -> Result<KeyPositions> {
    if span.first > span.last || span.last >= num_generated {
        return Err(Error::SpanOutOfRange {
            first: span.first,
            last: span.last,
            len: num_generated,
        });
    }
    Ok(KeyPositions {
        exact_before: span.first.checked_sub(1),
        exact_first: span.first,
        exact_last: span.last,
        exact_after: (span.last + 1 < num_generated).then_some(span.last + 1),
    })
}

fn first_occurrence(haystack: &str, aliases: &[String]) -> Option<usize> {
    aliases
        .iter()
        .map(|a| normalize(a))
        .filter(|a| !a.is_empty())
        .filter_map(|a| haystack.find(&a))
        .min()
}

/// Heuristic correctness: a gold alias occurs and its first occurrence comes
/// strictly before any wrong alias.
pub fn correctness_label(
    generated_answer: &str,
    gold_aliases: &[String],
    wrong_aliases: &[String],
) -> bool {
    let text = normalize(generated_answer);
    match (
        first_occurrence(&text, gold_aliases),
        first_occurrence(&text, wrong_aliases),
    ) {
        (Some(gold), Some(wrong)) => gold < wrong,
        (Some(_), None) => true,
        (None, _) => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Whitespace-attached tokenization: each token carries its leading space.
    fn tokenize(text: &str) -> Vec<GeneratedToken> {
        let chars: Vec<char> = text.chars().collect();
        let mut tokens = Vec::new();
        let mut start = 0;
        for i in 1..=chars.len() {
            let boundary = i == chars.len()
                || (chars[i] == ' ' && chars[i - 1] != ' ')
                || chars[i] == ','
                || chars[i - 1] == ',';
            if boundary {
                tokens.push(GeneratedToken::new(
                    chars[start..i].iter().collect::<String>(),
                    start,
                    i,
                ));
                start = i;
            }
        }
        tokens
    }

    #[test]
    fn hartford_span() {
        let answer = "The capital of Connecticut is Hartford, an iconic city";
        let tokens = tokenize(answer);
        let span = locate_exact_span(&tokens, answer, "Hartford").unwrap().unwrap();
        assert_eq!(span.first, span.last);
        assert_eq!(tokens[span.first].text, " Hartford");
    }

    #[test]
    fn multi_token_span_covers_all_pieces() {
        let answer = "It was Pierre Elliott Trudeau.";
        let tokens = tokenize(answer);
        let span = locate_exact_span(&tokens, answer, "Pierre Elliott Trudeau")
            .unwrap()
            .unwrap();
        assert_eq!((span.first, span.last), (2, 4));
    }

    #[test]
    fn subword_tokens_are_covered() {
        let answer = "Blaenavon";
        let tokens = vec![
            GeneratedToken::new("Bla", 0, 3),
            GeneratedToken::new("en", 3, 5),
            GeneratedToken::new("avon", 5, 9),
        ];
        let span = locate_exact_span(&tokens, answer, "enav").unwrap().unwrap();
        assert_eq!((span.first, span.last), (1, 2));
        let span = locate_exact_span(&tokens, answer, answer).unwrap().unwrap();
        assert_eq!((span.first, span.last), (0, 2));
    }

    #[test]
    fn absent_answer() {
        let answer = "The capital of France is Lyon";
        let tokens = tokenize(answer);
        assert_eq!(locate_exact_span(&tokens, answer, "Paris").unwrap(), None);
        assert_eq!(locate_exact_span(&tokens, answer, "").unwrap(), None);
    }

    #[test]
    fn leftmost_occurrence_wins() {
        let answer = "Rome or maybe Rome";
        let tokens = tokenize(answer);
        let span = locate_exact_span(&tokens, answer, "Rome").unwrap().unwrap();
        assert_eq!((span.first, span.last), (0, 0));
    }

    #[test]
    fn non_ascii_offsets_are_chars() {
        let answer = "Jean Chrétien won";
        let tokens = tokenize(answer);
        let span = locate_exact_span(&tokens, answer, "won").unwrap().unwrap();
        assert_eq!(tokens[span.first].text, " won");
        assert_eq!(char_slice(answer, 5, 13), Some("Chrétien"));
    }

    #[test]
    fn inconsistent_offsets_rejected() {
        let tokens = vec![GeneratedToken::new("abc", 0, 10)];
        assert!(matches!(
            locate_exact_span(&tokens, "abc", "a"),
            Err(Error::InconsistentOffsets(_))
        ));
        let tokens = vec![GeneratedToken::new("b", 1, 2), GeneratedToken::new("a", 0, 1)];
        assert!(locate_exact_span(&tokens, "ab", "a").is_err());
    }

    #[test]
    fn key_position_cases() {
        let k = key_positions(TokenSpan::new(5, 6), 10).unwrap();
        assert_eq!(
            (k.exact_before, k.exact_first, k.exact_last, k.exact_after),
            (Some(4), 5, 6, Some(7))
        );
        assert_eq!(key_positions(TokenSpan::new(0, 1), 10).unwrap().exact_before, None);
        assert_eq!(key_positions(TokenSpan::new(7, 9), 10).unwrap().exact_after, None);
        assert!(matches!(
            key_positions(TokenSpan::new(7, 10), 10),
            Err(Error::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn correctness_heuristic() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert!(correctness_label("The capital is Hartford.", &s(&["Hartford"]), &[]));
        assert!(!correctness_label("X not Y", &s(&["Y"]), &s(&["X"])));
        assert!(!correctness_label("no mention", &s(&["Z"]), &[]));
        assert!(correctness_label("it is  HARTFORD", &s(&["hartford"]), &[]));
        assert!(correctness_label("Y, not X", &s(&["Y"]), &s(&["X"])));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize("  Collar \n"), "collar");
        assert_eq!(normalize("The   Letter q"), "the letter q");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn located_span_contains_answer(
                words in prop::collection::vec("[a-zA-Zé]{1,6}", 1..12),
                pick in 0usize..12,
                width in 1usize..3,
            ) {
                let answer = words.join(" ");
                let tokens = tokenize(&answer);
                let pick = pick % words.len();
                let end = (pick + width).min(words.len());
                let exact = words[pick..end].join(" ");
                let span = locate_exact_span(&tokens, &answer, &exact).unwrap().unwrap();
                let slice = char_slice(
                    &answer,
                    tokens[span.first].char_start,
                    tokens[span.last].char_end,
                ).unwrap();
                prop_assert!(slice.contains(&exact));
                let k = key_positions(span, tokens.len()).unwrap();
                if let Some(after) = k.exact_after {
                    prop_assert_eq!(after, span.last + 1);
                    prop_assert!(after < tokens.len());
                }
            }
        }
    }
}
