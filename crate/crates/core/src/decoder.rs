//! Transformer decoder: causal self-attention, cross-attention over the
//! fused context encoding, and a feed-forward sublayer, each post-normed.

use serde::{Deserialize, Serialize};

use crate::data::EOS;
use crate::embeddings::Embeddings;
use crate::error::{Error, Result};
use crate::layers::{causal_mask, residual_norm, FeedForward, LayerNorm, MultiHeadAttention};
use crate::params::{Graph, Init, ParamStore};
use crate::tensor::Var;

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub self_norm: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub cross_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, d: usize, heads: usize) -> Self {
        DecoderLayer {
            self_attn: MultiHeadAttention::new(store, init, &format!("{name}.self_attn"), d, heads),
            self_norm: LayerNorm::new(store, init, &format!("{name}.self_norm"), d),
            cross_attn: MultiHeadAttention::new(store, init, &format!("{name}.cross_attn"), d, heads),
            cross_norm: LayerNorm::new(store, init, &format!("{name}.cross_norm"), d),
            ffn: FeedForward::new(store, init, &format!("{name}.ffn"), d),
            ffn_norm: LayerNorm::new(store, init, &format!("{name}.ffn_norm"), d),
        }
    }

    /// `causal` is the `[n × n]` self-attention mask, `memory_pad` the
    /// per-row padding flags of `memory`.
    pub fn forward(&self, g: &mut Graph, x: Var, causal: &[bool], memory: Var, memory_pad: &[bool]) -> Result<Var> {
        let (a, _) = self.self_attn.forward(g, x, x, causal)?;
        let x = residual_norm(g, &self.self_norm, x, a)?;
        let (c, _) = self.cross_attn.forward(g, x, memory, memory_pad)?;
        let x = residual_norm(g, &self.cross_norm, x, c)?;
        let f = self.ffn.forward(g, x)?;
        residual_norm(g, &self.ffn_norm, x, f)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Decoder {
    pub layers: Vec<DecoderLayer>,
}

/// Response-side decoder inputs.
#[derive(Clone, Copy, Debug)]
pub struct DecoderInput<'i> {
    pub ids: &'i [usize],
    pub pad: &'i [bool],
    pub role: usize,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, n_layers: usize, d: usize, heads: usize) -> Self {
        Decoder {
            layers: (0..n_layers)
                .map(|l| DecoderLayer::new(store, init, &format!("decoder.{l}"), d, heads))
                .collect(),
        }
    }

    /// Logits `[L_resp × V]` for every response input position.
    pub fn decode_forward(
        &self,
        g: &mut Graph,
        emb: &Embeddings,
        input: DecoderInput,
        memory: Var,
        memory_pad: &[bool],
    ) -> Result<Var> {
        let positions: Vec<usize> = (0..input.ids.len()).collect();
        let mut x = emb.embed_utterance(g, input.ids, input.role, &positions)?;
        let causal = causal_mask(input.pad);
        for layer in &self.layers {
            x = layer.forward(g, x, &causal, memory, memory_pad)?;
        }
        emb.output_logits(g, x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub max_new_tokens: usize,
    pub stop_token: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            max_new_tokens: 30,
            stop_token: EOS,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_new_tokens == 0 {
            return Err(Error::Config("generation.max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
