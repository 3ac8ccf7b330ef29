//! Answer-overlap metrics over SQuAD-style normalized tokens.

use std::collections::{HashMap, HashSet};

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, drop punctuation characters, drop articles, split on
/// whitespace.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let stripped: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && !is_unicode_punct(*c))
        .collect();
    stripped
        .split_whitespace()
        .filter(|t| !ARTICLES.contains(t))
        .map(str::to_string)
        .collect()
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2018}' | '\u{2019}' | '\u{201C}' | '\u{201D}' | '\u{2013}' | '\u{2014}' | '\u{2026}'
    )
}

fn counts(tokens: &[String]) -> HashMap<&str, usize> {
    let mut m = HashMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

fn clipped_overlap(pred: &[String], gold: &[String]) -> usize {
    let g = counts(gold);
    counts(pred)
        .into_iter()
        .map(|(t, n)| n.min(g.get(t).copied().unwrap_or(0)))
        .sum()
}

/// Multiset token F1. Both empty scores 1, exactly one empty scores 0.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    match (p.is_empty(), g.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let common = clipped_overlap(&p, &g);
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Clipped unigram precision, times `min(1, exp(1 - ref_len / pred_len))` when
/// `brevity_penalty` is set. An empty prediction scores 0.
pub fn bleu1(prediction: &str, gold: &str, brevity_penalty: bool) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    if p.is_empty() {
        return 0.0;
    }
    let precision = clipped_overlap(&p, &g) as f64 / p.len() as f64;
    if !brevity_penalty {
        return precision;
    }
    let bp = (1.0 - g.len() as f64 / p.len() as f64).exp().min(1.0);
    precision * bp
}

/// Fraction of evidence sessions present among the hits' sessions.
/// `None` when there is no evidence to recall.
pub fn retrieval_recall<S: AsRef<str>>(hit_sessions: &[S], evidence: &[S]) -> Option<f64> {
    let wanted: HashSet<&str> = evidence.iter().map(AsRef::as_ref).collect();
    if wanted.is_empty() {
        return None;
    }
    let found: HashSet<&str> = hit_sessions
        .iter()
        .map(AsRef::as_ref)
        .filter(|s| wanted.contains(s))
        .collect();
    Some(found.len() as f64 / wanted.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The Amalfi Coast!"), vec!["amalfi", "coast"]);
        assert!(normalize_answer("").is_empty());
        assert_eq!(normalize_answer("She is single."), vec!["she", "is", "single"]);
        assert_eq!(normalize_answer("An apple, a day"), vec!["apple", "day"]);
        assert_eq!(normalize_answer("Caroline\u{2019}s"), vec!["carolines"]);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("She is single", "She is single"), 1.0);
        assert_eq!(token_f1("married", "single"), 0.0);
        assert!((token_f1("single right now", "she is single") - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(token_f1("", ""), 1.0);
        assert_eq!(token_f1("the", "a"), 1.0);
        assert_eq!(token_f1("", "single"), 0.0);
        assert_eq!(token_f1("single", ""), 0.0);
    }

    #[test]
    fn f1_counts_multiset_overlap() {
        // pred has "red" twice, gold once: overlap 1, P = 1/2, R = 1
        assert!((token_f1("red red", "red") - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_examples() {
        assert_eq!(bleu1("the cat sat", "the cat sat", true), 1.0);
        assert!((bleu1("the cat", "the cat sat", true) - (-1.0f64).exp()).abs() < 1e-9);
        assert!((bleu1("the cat", "the cat sat", true) - 0.3679).abs() < 1e-4);
        assert_eq!(bleu1("the cat", "the cat sat", false), 1.0);
        assert_eq!(bleu1("dog", "cat", true), 0.0);
        assert_eq!(bleu1("", "cat", true), 0.0);
        assert_eq!(bleu1("cat", "", true), 0.0);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(retrieval_recall(&["s1", "s2", "s3"], &["s1", "s3"]), Some(1.0));
        assert_eq!(retrieval_recall(&["s4"], &["s1", "s3"]), Some(0.0));
        assert_eq!(retrieval_recall(&["s1", "s1", "s9"], &["s1", "s3"]), Some(0.5));
        assert_eq!(retrieval_recall::<&str>(&["s1"], &[]), None);
    }
}
