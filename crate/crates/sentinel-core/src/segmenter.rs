//! Sentence boundary detection.
//!
//! A boundary is a run of `.`, `!` or `?` (plus any closing quotes or
//! brackets) followed by whitespace or the end of input. A single period
//! closing a known abbreviation does not end a sentence; decimals never split
//! because their period is followed by a digit.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

const SHIPPED_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSpan {
    pub text: String,
    /// Sentence ordinal within the input.
    pub index: usize,
    /// Byte range of `text` within the input.
    pub byte_start: usize,
    pub byte_end: usize,
    /// Whitespace-token range within the input, end exclusive.
    pub token_start: usize,
    pub token_end: usize,
}

pub fn is_terminal_punct(ch: char) -> bool {
    matches!(ch, '.' | '!' | '?')
}

fn is_closer(ch: char) -> bool {
    matches!(ch, '"' | '\'' | ')' | ']' | '}' | '\u{201d}' | '\u{2019}')
}

fn is_opener(ch: char) -> bool {
    matches!(ch, '"' | '\'' | '(' | '[' | '{' | '\u{201c}' | '\u{2018}')
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: BTreeSet<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Self::with_abbreviations(SHIPPED_ABBREVIATIONS.lines())
    }
}

impl Segmenter {
    /// Builds a segmenter from an explicit abbreviation list. Entries are
    /// matched case-insensitively and include their trailing period.
    pub fn with_abbreviations<'a>(list: impl IntoIterator<Item = &'a str>) -> Self {
        let mut s = Self { abbreviations: BTreeSet::new() };
        s.extend(list);
        s
    }

    pub fn extend<'a>(&mut self, list: impl IntoIterator<Item = &'a str>) {
        for a in list {
            let a = a.trim();
            if a.is_empty() || a.starts_with('#') {
                continue;
            }
            let mut a = a.to_lowercase();
            if !a.ends_with('.') {
                a.push('.');
            }
            self.abbreviations.insert(a);
        }
    }

    pub fn is_abbreviation(&self, word: &str) -> bool {
        self.abbreviations.contains(&word.to_lowercase())
    }

    pub fn segment(&self, text: &str) -> Vec<SentenceSpan> {
        let mut spans = Vec::new();
        let mut start: Option<usize> = None;
        let mut tokens_before = 0usize;
        let mut in_token = false;
        let mut span_tokens = 0usize;
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut i = 0;
        while i < chars.len() {
            let (pos, ch) = chars[i];
            if ch.is_whitespace() {
                in_token = false;
                i += 1;
                continue;
            }
            if !in_token {
                in_token = true;
                if start.is_none() {
                    start = Some(pos);
                    span_tokens = 0;
                }
                span_tokens += 1;
            }
            if is_terminal_punct(ch) {
                let mut j = i;
                while j + 1 < chars.len() && is_terminal_punct(chars[j + 1].1) {
                    j += 1;
                }
                let run_len = j - i + 1;
                while j + 1 < chars.len() && is_closer(chars[j + 1].1) {
                    j += 1;
                }
                let end = chars.get(j + 1).map_or(text.len(), |c| c.0);
                let at_break = j + 1 == chars.len() || chars[j + 1].1.is_whitespace();
                if at_break && !(ch == '.' && run_len == 1 && self.ends_with_abbreviation(text, pos)) {
                    let s = start.take().unwrap_or(pos);
                    spans.push(SentenceSpan {
                        text: text[s..end].to_string(),
                        index: spans.len(),
                        byte_start: s,
                        byte_end: end,
                        token_start: tokens_before,
                        token_end: tokens_before + span_tokens,
                    });
                    tokens_before += span_tokens;
                    span_tokens = 0;
                }
                i = j + 1;
                continue;
            }
            i += 1;
        }
        if let Some(s) = start {
            let end = text.trim_end().len();
            if end > s {
                spans.push(SentenceSpan {
                    text: text[s..end].to_string(),
                    index: spans.len(),
                    byte_start: s,
                    byte_end: end,
                    token_start: tokens_before,
                    token_end: tokens_before + span_tokens,
                });
            }
        }
        spans
    }

    /// Whether the token ending with the period at `dot` is a listed
    /// abbreviation.
    fn ends_with_abbreviation(&self, text: &str, dot: usize) -> bool {
        let head = &text[..dot + 1];
        let word_start =
            head.char_indices().rev().find(|(_, c)| c.is_whitespace()).map_or(0, |(p, c)| p + c.len_utf8());
        let word = head[word_start..].trim_start_matches(is_opener);
        !word.is_empty() && self.is_abbreviation(word)
    }
}

/// Segments with the shipped abbreviation list.
pub fn segment(text: &str) -> Vec<SentenceSpan> {
    Segmenter::default().segment(text)
}

/// Number of whitespace-delimited tokens.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}
