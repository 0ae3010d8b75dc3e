//! Tokenization shared by every pipeline.
//!
//! Rules: split on non-alphanumerics, split camelCase and snake_case,
//! lowercase, then drop stopwords and single-character tokens. No stemming.

use std::collections::BTreeSet;

/// Built-in English stopword list (35 words).
pub const STOPWORDS: [&str; 35] = [
    "a", "an", "the", "and", "or", "but", "then", "of", "to", "in", "on", "at", "by", "for",
    "with", "from", "into", "onto", "is", "are", "was", "were", "be", "been", "it", "its", "this",
    "that", "these", "those", "as", "so", "if", "my", "your",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Lowercased content tokens of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    raw_words(text)
        .into_iter()
        .flat_map(|w| split_camel(&w))
        .map(|t| t.to_lowercase())
        .filter(|t| t.chars().count() > 1 && !is_stopword(t))
        .collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Maximal alphanumeric runs. Underscores and every other symbol separate.
fn raw_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// `saveFile` -> [save, File]; `HTTPServer` -> [HTTP, Server]; digits stay
/// attached to the preceding run (`v2`).
fn split_camel(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..chars.len() {
        let prev = chars[i - 1];
        let cur = chars[i];
        let lower_to_upper = (prev.is_lowercase() || prev.is_ascii_digit()) && cur.is_uppercase();
        let acronym_end = prev.is_uppercase()
            && cur.is_uppercase()
            && chars.get(i + 1).is_some_and(|n| n.is_lowercase());
        if lower_to_upper || acronym_end {
            out.push(chars[start..i].iter().collect());
            start = i;
        }
    }
    if start < chars.len() {
        out.push(chars[start..].iter().collect());
    }
    out
}

/// Token-set F1 between two sets; 0 when either side is empty.
pub fn token_set_f1(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let common = a.intersection(b).count() as f64;
    if common == 0.0 {
        return 0.0;
    }
    let precision = common / a.len() as f64;
    let recall = common / b.len() as f64;
    2.0 * precision * recall / (precision + recall)
}
