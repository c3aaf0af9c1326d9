//! Encoder FLOP accounting.
//!
//! [`Convention::Leading`] keeps the leading-order terms of the usual
//! transformer complexity analysis: a multiply-accumulate is 2 FLOPs; the
//! Q/K/V projections and the score and value products are counted; the attention output projection, softmax,
//! LayerNorm and bias costs are left out. This gives
//!
//! * self-attention over `L` tokens: `6Ld² + 4L²d`
//! * local self-attention over `N` equal utterances: `6Ld² + 4L²d/N`
//! * feed-forward (inner width 4d): `16Ld²`
//! * gate: `4Ld²`
//! * inter-attention: counted as self-attention over all `L` tokens (the
//!   relative key-bias additions are negligible).
//!
//! [`Convention::Exact`] counts every operation the implementation
//! performs: all matrix products (output projection included) at 2 FLOPs
//! per multiply-add, plus bias and residual additions, score scaling,
//! softmax (5 per score), LayerNorm (7 per element), ReLU, the key-bias
//! additions and the gate's element-wise work, one FLOP each.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::LgcmConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Leading,
    Exact,
}

/// `6Ld² + 4L²d`
pub fn self_attention(l: f64, d: f64) -> f64 {
    6.0 * l * d * d + 4.0 * l * l * d
}

/// `6Ld² + 4L²d/N`
pub fn local_self_attention(l: f64, d: f64, n: f64) -> f64 {
    6.0 * l * d * d + 4.0 * l * l * d / n
}

/// `16Ld²`
pub fn ffn(l: f64, d: f64) -> f64 {
    16.0 * l * d * d
}

/// `4Ld²`
pub fn gate(l: f64, d: f64) -> f64 {
    4.0 * l * d * d
}

const SOFTMAX_PER_SCORE: f64 = 5.0;
const LAYER_NORM_PER_ELEMENT: f64 = 7.0;

fn exact_self_attention(l: f64, d: f64, heads: f64) -> f64 {
    let projections = 4.0 * (2.0 * l * d * d + l * d);
    let scores = 2.0 * l * l * d + l * l * heads * (1.0 + SOFTMAX_PER_SCORE);
    let mix = 2.0 * l * l * d;
    projections + scores + mix
}

fn exact_ffn(l: f64, d: f64) -> f64 {
    ffn(l, d) + 4.0 * l * d + l * d + 4.0 * l * d
}

fn exact_gate(l: f64, d: f64) -> f64 {
    // projection + bias, sigmoid, 1 − H, two products, one sum
    gate(l, d) + l * d + l * d + l * d + 2.0 * l * d + l * d
}

fn exact_post_norm(l: f64, d: f64, residual: bool) -> f64 {
    l * d * LAYER_NORM_PER_ELEMENT + if residual { l * d } else { 0.0 }
}

/// Per-component and per-encoder FLOPs for one context.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlopReport {
    pub convention: Convention,
    pub d: usize,
    pub heads: usize,
    pub lengths: Vec<usize>,
    pub l_total: usize,
    pub n: usize,
    pub n_local: usize,
    pub n_global: usize,
    pub flat_layers: usize,
    /// Flat self-attention over all `L` tokens (one layer).
    pub self_attention: f64,
    /// Per-utterance self-attention summed over utterances (one layer).
    pub local_self_attention: f64,
    pub inter_attention: f64,
    pub ffn: f64,
    pub gate: f64,
    /// `n_local·(local SA + FFN) + n_global·(inter-attention + gate)`
    pub lgcm_encoder: f64,
    /// `flat_layers·(SA + FFN)`
    pub flat_encoder: f64,
}

impl FlopReport {
    pub fn lgcm_is_cheaper(&self) -> bool {
        self.lgcm_encoder < self.flat_encoder
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# encoder FLOPs ({} convention), L = {}, N = {}, d = {}, layers local/global/flat = {}/{}/{}",
            match self.convention {
                Convention::Leading => "leading",
                Convention::Exact => "exact",
            },
            self.l_total,
            self.n,
            self.d,
            self.n_local,
            self.n_global,
            self.flat_layers
        );
        let rows = [
            ("self_attention", self.self_attention),
            ("local_self_attention", self.local_self_attention),
            ("inter_attention", self.inter_attention),
            ("ffn", self.ffn),
            ("gate", self.gate),
            ("lgcm_encoder", self.lgcm_encoder),
            ("flat_encoder", self.flat_encoder),
        ];
        for (name, v) in rows {
            let _ = writeln!(s, "{name:<22}{v:>24.1}");
        }
        let _ = writeln!(
            s,
            "gate < ffn: {}; lgcm encoder < flat encoder: {} (ratio {:.4})",
            self.gate < self.ffn,
            self.lgcm_is_cheaper(),
            self.lgcm_encoder / self.flat_encoder
        );
        s
    }

    pub fn csv_header() -> &'static str {
        "convention,L,N,d,n_local,n_global,flat_layers,self_attention,local_self_attention,inter_attention,ffn,gate,lgcm_encoder,flat_encoder,lgcm_cheaper"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            match self.convention {
                Convention::Leading => "leading",
                Convention::Exact => "exact",
            },
            self.l_total,
            self.n,
            self.d,
            self.n_local,
            self.n_global,
            self.flat_layers,
            self.self_attention,
            self.local_self_attention,
            self.inter_attention,
            self.ffn,
            self.gate,
            self.lgcm_encoder,
            self.flat_encoder,
            self.lgcm_is_cheaper()
        )
    }
}

/// Layer shape needed for counting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopShape {
    pub d: usize,
    pub heads: usize,
    pub n_local: usize,
    pub n_global: usize,
    pub flat_layers: usize,
}

impl From<&LgcmConfig> for FlopShape {
    fn from(c: &LgcmConfig) -> Self {
        FlopShape {
            d: c.d,
            heads: c.heads,
            n_local: c.n_local,
            n_global: c.n_global,
            flat_layers: c.flat_layers(),
        }
    }
}

/// Counts for `n` utterances of equal length `l_total / n`. In the leading
/// convention the local term is the closed form `6Ld² + 4L²d/N` even when
/// `n` does not divide `l_total`.
pub fn count_flops(shape: FlopShape, l_total: usize, n: usize, convention: Convention) -> Result<FlopReport> {
    if n == 0 || l_total == 0 {
        return Err(Error::Config("flops: L and N must be positive".into()));
    }
    if n > l_total {
        return Err(Error::Config(format!("flops: N = {n} exceeds L = {l_total}")));
    }
    let base = l_total / n;
    let lengths = (0..n).map(|i| base + usize::from(i < l_total % n)).collect::<Vec<_>>();
    let mut report = count_flops_lengths(shape, &lengths, convention)?;
    if convention == Convention::Leading {
        let (l, d) = (l_total as f64, shape.d as f64);
        report.local_self_attention = local_self_attention(l, d, n as f64);
        report.lgcm_encoder = lgcm_total(shape, &report);
    }
    Ok(report)
}

/// Counts for utterances of the given lengths, by exact summation of the
/// per-utterance self-attention terms.
pub fn count_flops_lengths(shape: FlopShape, lengths: &[usize], convention: Convention) -> Result<FlopReport> {
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(Error::Config("flops: every utterance needs at least one token".into()));
    }
    if shape.d == 0 || shape.heads == 0 || !shape.d.is_multiple_of(shape.heads) {
        return Err(Error::Config(format!("flops: d = {} must be a positive multiple of heads = {}", shape.d, shape.heads)));
    }
    let l_total: usize = lengths.iter().sum();
    let (l, d, h) = (l_total as f64, shape.d as f64, shape.heads as f64);
    let n = lengths.len() as f64;
    let mut report = FlopReport {
        convention,
        d: shape.d,
        heads: shape.heads,
        lengths: lengths.to_vec(),
        l_total,
        n: lengths.len(),
        n_local: shape.n_local,
        n_global: shape.n_global,
        flat_layers: shape.flat_layers,
        self_attention: 0.0,
        local_self_attention: 0.0,
        inter_attention: 0.0,
        ffn: 0.0,
        gate: 0.0,
        lgcm_encoder: 0.0,
        flat_encoder: 0.0,
    };
    match convention {
        Convention::Leading => {
            report.self_attention = self_attention(l, d);
            report.local_self_attention = lengths.iter().map(|&lt| self_attention(lt as f64, d)).sum();
            report.inter_attention = self_attention(l, d);
            report.ffn = ffn(l, d);
            report.gate = gate(l, d);
        }
        Convention::Exact => {
            let norm = exact_post_norm(l, d, true);
            report.self_attention = exact_self_attention(l, d, h) + norm;
            report.local_self_attention = lengths
                .iter()
                .map(|&lt| exact_self_attention(lt as f64, d, h))
                .sum::<f64>()
                + norm;
            // key bias added to every key row once per query utterance
            report.inter_attention = exact_self_attention(l, d, h) + n * l * d + norm;
            report.ffn = exact_ffn(l, d) + norm;
            report.gate = exact_gate(l, d) + exact_post_norm(l, d, false);
        }
    }
    report.lgcm_encoder = lgcm_total(shape, &report);
    report.flat_encoder = shape.flat_layers as f64 * (report.self_attention + report.ffn);
    Ok(report)
}

fn lgcm_total(shape: FlopShape, r: &FlopReport) -> f64 {
    shape.n_local as f64 * (r.local_self_attention + r.ffn) + shape.n_global as f64 * (r.inter_attention + r.gate)
}
