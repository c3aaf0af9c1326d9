//! ROUGE-L: longest-common-subsequence F-measure, averaged over pairs.

use super::EvalPair;

pub const DEFAULT_BETA: f64 = 1.2;

/// LCS length by the standard two-row dynamic program.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `(1 + β²)·P·R / (R + β²·P)` on the 0–1 scale.
pub fn rouge_l_pair(hyp: &[String], reference: &[String], beta: f64) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(hyp, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / hyp.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

pub fn corpus_rouge_l(pairs: &[EvalPair], beta: f64) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    100.0 * pairs.iter().map(|p| rouge_l_pair(&p.hypothesis, &p.reference, beta)).sum::<f64>() / pairs.len() as f64
}
