//! Answer-string and entity-span metrics, plus the constrained span decoder.
//!
//! String metrics follow the de-facto extractive-QA convention: normalize
//! (lowercase, strip punctuation characters, drop the articles a/an/the,
//! collapse whitespace), then compare normalized strings (exact match) or
//! token multisets (F1).

use std::collections::HashMap;
use std::ops::Range;

use crate::corpus::LabeledSpan;

/// Longest answer the span decoder will emit, in tokens.
pub const MAX_ANSWER_TOKENS: usize = 30;

/// Lowercase, remove punctuation characters, drop article tokens, and join
/// the remaining tokens with single spaces.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

fn token_counts(text: &str) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for t in text.split(' ').filter(|t| !t.is_empty()) {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
}

/// Token-multiset overlap F1 over normalized forms, in [0, 1]. If either
/// side normalizes to nothing, the score is 1 exactly when both do.
pub fn span_f1(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pc = token_counts(&p);
    let gc = token_counts(&g);
    let p_total: usize = pc.values().sum();
    let g_total: usize = gc.values().sum();
    if p_total == 0 || g_total == 0 {
        return if p == g { 1.0 } else { 0.0 };
    }
    let overlap: usize = pc
        .iter()
        .map(|(t, &n)| n.min(gc.get(t).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p_total as f64;
    let recall = overlap as f64 / g_total as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Micro-averaged entity precision/recall/F1 over a corpus; a prediction
/// counts only if (start, end, label) all match a gold span of the same
/// sentence. Span order within a sentence is irrelevant.
pub fn entity_f1(
    predicted: &[Vec<LabeledSpan>],
    gold: &[Vec<LabeledSpan>],
) -> (f64, f64, f64) {
    assert_eq!(
        predicted.len(),
        gold.len(),
        "prediction and gold corpora differ in length"
    );
    let (mut tp, mut pred_total, mut gold_total) = (0usize, 0usize, 0usize);
    for (p_sent, g_sent) in predicted.iter().zip(gold) {
        pred_total += p_sent.len();
        gold_total += g_sent.len();
        let gold_set: std::collections::HashSet<_> = g_sent
            .iter()
            .map(|s| (s.start, s.end, s.label.as_str()))
            .collect();
        let mut seen = std::collections::HashSet::new();
        for s in p_sent {
            let key = (s.start, s.end, s.label.as_str());
            if gold_set.contains(&key) && seen.insert(key) {
                tp += 1;
            }
        }
    }
    if pred_total == 0 && gold_total == 0 {
        return (1.0, 1.0, 1.0);
    }
    let precision = if pred_total == 0 {
        0.0
    } else {
        tp as f64 / pred_total as f64
    };
    let recall = if gold_total == 0 {
        0.0
    } else {
        tp as f64 / gold_total as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}

/// Highest-scoring (start, end) pair with start ≤ end ≤ start+max_len−1,
/// both inside `range`; score is start_logit + end_logit. Ties go to the
/// smaller start, then the smaller end. None when `range` is empty.
pub fn predict_span(
    start_logits: &[f64],
    end_logits: &[f64],
    range: Range<usize>,
    max_answer_len: usize,
) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for s in range.clone() {
        let e_hi = range.end.min(s + max_answer_len);
        for e in s..e_hi {
            let score = start_logits[s] + end_logits[e];
            if best.map_or(true, |(b, _, _)| score > b) {
                best = Some((score, s, e));
            }
        }
    }
    best.map(|(_, s, e)| (s, e))
}
