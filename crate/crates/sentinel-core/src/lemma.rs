//! Noun lemmatization: lowercase singular forms.
//!
//! Irregular plurals come from a shipped exception table. Regular forms use
//! suffix rules; when a dictionary of known lemmas is available the rules only
//! propose candidates and the shortest known candidate wins.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

const IRREGULAR_PLURALS: &str = include_str!("../data/irregular_plurals.tsv");

fn irregular(word: &str) -> Option<&'static str> {
    IRREGULAR_PLURALS
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.split_once('\t'))
        .find(|(plural, _)| *plural == word)
        .map(|(_, singular)| singular)
}

fn normalize(word: &str) -> String {
    word.trim().trim_matches(|c: char| !c.is_alphanumeric() && c != '-').to_lowercase()
}

/// Rule-based singular form, no dictionary.
pub fn lemma_of(word: &str) -> String {
    let w = normalize(word);
    if let Some(s) = irregular(&w) {
        return s.to_string();
    }
    if w.len() <= 3 || w.contains(|c: char| !c.is_alphabetic() && c != '-') {
        return w;
    }
    if w.ends_with("ss") || w.ends_with("us") || w.ends_with("is") {
        return w;
    }
    if let Some(stem) = w.strip_suffix("ies") {
        if stem.len() > 1 {
            return alloc::format!("{stem}y");
        }
    }
    for suffix in ["sses", "ches", "shes", "xes", "zzes"] {
        if w.ends_with(suffix) {
            return w[..w.len() - 2].to_string();
        }
    }
    match w.strip_suffix('s') {
        Some(stem) => stem.to_string(),
        None => w,
    }
}

/// Morphy-style candidates for a plural or base noun form.
fn candidates(w: &str) -> Vec<String> {
    const RULES: [(&str, &str); 8] = [
        ("s", ""),
        ("ses", "s"),
        ("xes", "x"),
        ("zes", "z"),
        ("ches", "ch"),
        ("shes", "sh"),
        ("men", "man"),
        ("ies", "y"),
    ];
    let mut out = Vec::new();
    out.push(w.to_string());
    for (suffix, replacement) in RULES {
        if let Some(stem) = w.strip_suffix(suffix) {
            if !stem.is_empty() {
                out.push(alloc::format!("{stem}{replacement}"));
            }
        }
    }
    out
}

/// Dictionary-validated lemma. `is_known` answers whether a form is a noun
/// lemma; unknown words fall back to [`lemma_of`].
pub fn lemma_with(word: &str, is_known: impl Fn(&str) -> bool) -> String {
    let w = normalize(word);
    if let Some(s) = irregular(&w) {
        return s.to_string();
    }
    candidates(&w).into_iter().filter(|c| is_known(c)).min_by_key(String::len).unwrap_or_else(|| lemma_of(&w))
}
