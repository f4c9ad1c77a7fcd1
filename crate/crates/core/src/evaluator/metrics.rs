//! Pure scoring formulas.

use crate::text::normalized_words;

/// Longest common subsequence length by dynamic programming, two rolling rows.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Rouge-L F-measure over lowercased, punctuation-stripped word sequences.
pub fn rouge_l(generated: &str, reference: &str, beta: f64) -> f64 {
    let g = normalized_words(generated);
    let r = normalized_words(reference);
    rouge_l_tokens(&g, &r, beta)
}

pub fn rouge_l_tokens<T: PartialEq>(generated: &[T], reference: &[T], beta: f64) -> f64 {
    let lcs = lcs_len(generated, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / generated.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// `2TP / (2TP + FP + FN)`; 1 when nothing was claimed on either side.
pub fn factual_correctness_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        1.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Weighted sum of factual correctness and the non-negative part of semantic similarity.
pub fn accuracy(fc: f64, ss: f64, alpha: f64) -> f64 {
    alpha * fc + (1.0 - alpha) * ss.max(0.0)
}

/// Fraction of `flags` that are true; `None` for an empty slice.
pub fn fraction(flags: &[bool]) -> Option<f64> {
    if flags.is_empty() {
        None
    } else {
        Some(flags.iter().filter(|f| **f).count() as f64 / flags.len() as f64)
    }
}
