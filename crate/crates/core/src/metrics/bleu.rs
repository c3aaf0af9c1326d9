//! Corpus-level BLEU-4: modified n-gram precisions pooled over the corpus,
//! uniform weights, brevity penalty, no smoothing.

use super::{ngram_counts, EvalPair};

pub const MAX_ORDER: usize = 4;

/// Pooled clipped matches and hypothesis n-gram totals per order, plus
/// corpus lengths.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add_pair(&mut self, hyp: &[String], reference: &[String]) {
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
        for n in 1..=MAX_ORDER {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            self.totals[n - 1] += h.values().sum::<usize>();
            self.matches[n - 1] += h
                .iter()
                .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }

    /// `matches / totals` per order; `None` when the hypothesis corpus has
    /// no n-grams of that order.
    pub fn precisions(&self) -> [Option<f64>; MAX_ORDER] {
        std::array::from_fn(|i| (self.totals[i] > 0).then(|| self.matches[i] as f64 / self.totals[i] as f64))
    }

    /// `1` when the hypotheses are longer than the references, else
    /// `exp(1 − r/c)`; `0` for an empty hypothesis corpus.
    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// Score on the 0–100 scale; 0 if any order has no matches or no
    /// n-grams at all.
    pub fn score(&self) -> f64 {
        let mut log_sum = 0.0;
        for p in self.precisions() {
            match p {
                Some(p) if p > 0.0 => log_sum += p.ln(),
                _ => return 0.0,
            }
        }
        100.0 * self.brevity_penalty() * (log_sum / MAX_ORDER as f64).exp()
    }
}

pub fn bleu_stats(pairs: &[EvalPair]) -> BleuStats {
    let mut s = BleuStats::default();
    for p in pairs {
        s.add_pair(&p.hypothesis, &p.reference);
    }
    s
}

pub fn corpus_bleu(pairs: &[EvalPair]) -> f64 {
    let stats = bleu_stats(pairs);
    if stats.hyp_len == 0 {
        log::warn!("BLEU over an empty hypothesis corpus is 0");
    }
    stats.score()
}

/// Sentence-level BLEU with add-one smoothing on orders 2–4, for
/// diagnostics only.
pub fn sentence_bleu_smoothed(hyp: &[String], reference: &[String]) -> f64 {
    let mut s = BleuStats::default();
    s.add_pair(hyp, reference);
    if s.hyp_len == 0 || s.matches[0] == 0 {
        return 0.0;
    }
    let log_sum: f64 = (0..MAX_ORDER)
        .map(|i| {
            let (m, t) = if i == 0 {
                (s.matches[0] as f64, s.totals[0] as f64)
            } else {
                (s.matches[i] as f64 + 1.0, s.totals[i] as f64 + 1.0)
            };
            (m / t).ln()
        })
        .sum();
    100.0 * s.brevity_penalty() * (log_sum / MAX_ORDER as f64).exp()
}
