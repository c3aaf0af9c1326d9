//! NIST-4: information-weighted n-gram co-occurrence with the NIST
//! brevity factor.
//!
//! `info(w₁…wₙ) = log₂(count(w₁…wₙ₋₁) / count(w₁…wₙ))` over the reference
//! corpus, where the unigram "prefix" count is the total number of
//! reference words. For each order, the information of the clipped matched
//! n-grams is summed and divided by the number of hypothesis n-grams; the
//! per-order values are summed and multiplied by
//! `exp(β·ln²(min(L_hyp / L_ref, 1)))`, with `β` chosen so that a length
//! ratio of 2/3 gives a factor of 0.5.

use std::collections::BTreeMap;

use super::{ngram_counts, EvalPair};

pub const MAX_ORDER: usize = 4;

/// Information weight of every reference n-gram up to order 4.
pub fn information_weights(pairs: &[EvalPair]) -> BTreeMap<Vec<String>, f64> {
    let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    let mut words = 0usize;
    for p in pairs {
        words += p.reference.len();
        for n in 1..=MAX_ORDER {
            for (g, c) in ngram_counts(&p.reference, n) {
                *counts.entry(g.to_vec()).or_default() += c;
            }
        }
    }
    counts
        .iter()
        .map(|(g, &c)| {
            let prefix = if g.len() == 1 {
                words
            } else {
                counts[&g[..g.len() - 1].to_vec()]
            };
            (g.clone(), (prefix as f64 / c as f64).log2())
        })
        .collect()
}

pub fn brevity_factor(hyp_len: usize, ref_len: usize) -> f64 {
    if hyp_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let beta = 0.5f64.ln() / 1.5f64.ln().powi(2);
    let ratio = (hyp_len as f64 / ref_len as f64).min(1.0);
    (beta * ratio.ln().powi(2)).exp()
}

/// Unscaled NIST score.
pub fn nist_raw(pairs: &[EvalPair]) -> f64 {
    let info = information_weights(pairs);
    let mut gained = [0.0; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for p in pairs {
        hyp_len += p.hypothesis.len();
        ref_len += p.reference.len();
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(&p.hypothesis, n);
            let r = ngram_counts(&p.reference, n);
            totals[n - 1] += h.values().sum::<usize>();
            for (g, &c) in &h {
                let matched = c.min(r.get(g).copied().unwrap_or(0));
                if matched > 0 {
                    gained[n - 1] += matched as f64 * info[&g.to_vec()];
                }
            }
        }
    }
    if hyp_len == 0 {
        log::warn!("NIST over an empty hypothesis corpus is 0");
        return 0.0;
    }
    let sum: f64 = gained
        .iter()
        .zip(&totals)
        .filter(|(_, &t)| t > 0)
        .map(|(g, &t)| g / t as f64)
        .sum();
    sum * brevity_factor(hyp_len, ref_len)
}

/// NIST-4 on the report scale (raw × 100).
pub fn corpus_nist(pairs: &[EvalPair]) -> f64 {
    100.0 * nist_raw(pairs)
}
