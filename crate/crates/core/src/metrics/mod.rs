//! Automatic response-quality metrics over (hypothesis, reference) token
//! sequences: corpus BLEU-4, NIST-4, METEOR (exact + stem stages),
//! ROUGE-L, plus the report that bundles them with perplexity.
//!
//! All text-overlap scores are on a 0–100 scale. Every aggregation walks
//! pairs and n-grams in a fixed order, so scores are bit-reproducible.

pub mod bleu;
pub mod meteor;
pub mod nist;
pub mod rouge;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;

/// One generated response and its single reference.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPair {
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
}

impl EvalPair {
    /// Whitespace-tokenized pair, convenient for tests and small tools.
    pub fn from_text(hypothesis: &str, reference: &str) -> Self {
        let split = |s: &str| s.split_whitespace().map(str::to_string).collect();
        EvalPair {
            hypothesis: split(hypothesis),
            reference: split(reference),
        }
    }
}

/// Occurrence count of every length-`n` window of `tokens`.
pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if n > 0 {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    pub rouge_beta: f64,
    /// Enables METEOR's stem-matching stage.
    pub meteor_stem: bool,
    /// Also report mean smoothed sentence-level BLEU (diagnostic).
    pub sentence_bleu: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            rouge_beta: rouge::DEFAULT_BETA,
            meteor_stem: true,
            sentence_bleu: false,
        }
    }
}

/// Notes printed with every report describing how the scores are defined.
pub const REPORT_NOTES: [&str; 5] = [
    "BLEU-4 and NIST-4 are corpus-level without smoothing",
    "NIST is capped at 4-grams and scaled by 100",
    "METEOR uses exact and Porter2-stem stages only (no synonym stage)",
    "ROUGE-L is the per-pair LCS F-measure averaged over the corpus",
    "single reference per hypothesis",
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub ppl: Option<f64>,
    pub bleu4: f64,
    pub nist4: f64,
    pub meteor: f64,
    pub rouge_l: f64,
    pub sentence_bleu: Option<f64>,
    pub pairs: usize,
    pub rouge_beta: f64,
    pub meteor_stem: bool,
}

pub fn evaluate(pairs: &[EvalPair], ppl: Option<f64>, opts: &MetricOptions, exec: Execution) -> MetricReport {
    let meteor_opts = meteor::MeteorOptions { stem: opts.meteor_stem };
    let per_pair = exec.map(pairs, |p| {
        (
            meteor::meteor_pair(&p.hypothesis, &p.reference, meteor_opts),
            rouge::rouge_l_pair(&p.hypothesis, &p.reference, opts.rouge_beta),
            opts.sentence_bleu
                .then(|| bleu::sentence_bleu_smoothed(&p.hypothesis, &p.reference)),
        )
    });
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        if pairs.is_empty() {
            0.0
        } else {
            xs.sum::<f64>() / pairs.len() as f64
        }
    };
    MetricReport {
        ppl,
        bleu4: bleu::corpus_bleu(pairs),
        nist4: nist::corpus_nist(pairs),
        meteor: 100.0 * mean(&mut per_pair.iter().map(|p| p.0)),
        rouge_l: 100.0 * mean(&mut per_pair.iter().map(|p| p.1)),
        sentence_bleu: opts
            .sentence_bleu
            .then(|| mean(&mut per_pair.iter().map(|p| p.2.unwrap_or(0.0)))),
        pairs: pairs.len(),
        rouge_beta: opts.rouge_beta,
        meteor_stem: opts.meteor_stem,
    }
}

impl MetricReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for note in REPORT_NOTES {
            let _ = writeln!(out, "# {note}");
        }
        let _ = writeln!(out, "# ROUGE-L beta = {}, METEOR stemming = {}", self.rouge_beta, self.meteor_stem);
        let _ = writeln!(out, "pairs    {}", self.pairs);
        match self.ppl {
            Some(p) => {
                let _ = writeln!(out, "ppl      {p:.4}");
            }
            None => out.push_str("ppl      n/a\n"),
        }
        let _ = writeln!(out, "bleu4    {:.4}", self.bleu4);
        let _ = writeln!(out, "nist4    {:.4}", self.nist4);
        let _ = writeln!(out, "meteor   {:.4}", self.meteor);
        let _ = writeln!(out, "rouge_l  {:.4}", self.rouge_l);
        if let Some(s) = self.sentence_bleu {
            let _ = writeln!(out, "sentence_bleu_smoothed  {s:.4}");
        }
        out
    }

    /// Comment lines with the notes, a header row and one value row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for note in REPORT_NOTES {
            let _ = writeln!(out, "# {note}");
        }
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        out.push_str("pairs,ppl,bleu4,nist4,meteor,rouge_l,sentence_bleu\n");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            self.pairs,
            opt(self.ppl),
            self.bleu4,
            self.nist4,
            self.meteor,
            self.rouge_l,
            opt(self.sentence_bleu)
        );
        out
    }
}
