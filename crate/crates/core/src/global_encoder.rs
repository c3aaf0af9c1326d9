//! Dialogue-level encoder: inter-attention across all context utterances
//! with a learned key bias per utterance offset, fused with the layer input
//! by a sigmoid gate.
//!
//! All context rows (padding included) are laid out as one flat matrix; a
//! [`Segments`] value records which rows belong to which utterance.

use std::ops::Range;

use crate::embeddings::Embeddings;
use crate::error::Result;
use crate::layers::{residual_norm, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::params::{Graph, Init, ParamId, ParamStore};
use crate::tensor::Var;

/// Row layout of the flattened context.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segments {
    pub spans: Vec<Range<usize>>,
    /// Window position of each utterance.
    pub window_pos: Vec<usize>,
    /// Per row; true at padding.
    pub pad: Vec<bool>,
}

impl Segments {
    pub fn rows(&self) -> usize {
        self.pad.len()
    }

    pub fn row_window_pos(&self) -> Vec<usize> {
        let mut out = vec![0; self.rows()];
        for (span, &pos) in self.spans.iter().zip(&self.window_pos) {
            out[span.clone()].fill(pos);
        }
        out
    }
}

/// Attention weights (head-major, `[heads × rows × rows]`, zero where a key
/// was not attended) and gate activations (`[rows × d]`) of one layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerTrace {
    pub heads: usize,
    pub rows: usize,
    pub d: usize,
    pub attention: Vec<f64>,
    pub gate: Option<Vec<f64>>,
}

impl LayerTrace {
    pub fn weight(&self, head: usize, query: usize, key: usize) -> f64 {
        self.attention[(head * self.rows + query) * self.rows + key]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncoderTrace {
    pub segments: Segments,
    pub layers: Vec<LayerTrace>,
}

/// How context rows are mixed inside a global layer.
#[derive(Clone, Debug)]
pub enum Mixer {
    /// Every utterance attends over all utterances' tokens; `rpe` is the
    /// `[2·n_max − 1 × d/h]` key-bias table indexed by offset `s − t`.
    Inter {
        attn: MultiHeadAttention,
        rpe: ParamId,
        n_max: usize,
    },
    /// Per-utterance self-attention (the no-inter-attention ablation).
    SelfAttention { attn: MultiHeadAttention },
}

#[derive(Clone, Debug)]
pub enum Fusion {
    /// `H = σ([c; C]W + b)`, `C̃ = (1 − H)⊙C + H⊙c`.
    Gate { proj: Linear },
    /// Standard FFN sublayer on `C` (the no-gate ablation).
    FeedForward(FeedForward),
}

#[derive(Clone, Debug)]
pub struct GlobalLayer {
    pub mixer: Mixer,
    pub mix_norm: LayerNorm,
    pub fusion: Fusion,
    pub fusion_norm: LayerNorm,
}

pub struct GateOutput {
    pub gate: Var,
    /// The convex combination before layer normalization.
    pub fused: Var,
}

impl GlobalLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        d: usize,
        heads: usize,
        n_max: usize,
        inter_attention: bool,
        gate: bool,
    ) -> Self {
        let attn = MultiHeadAttention::new(store, init, &format!("{name}.attn"), d, heads);
        let mixer = if inter_attention {
            let rpe = store.add(
                format!("{name}.rpe"),
                init.normal(vec![2 * n_max - 1, d / heads]),
            );
            Mixer::Inter { attn, rpe, n_max }
        } else {
            Mixer::SelfAttention { attn }
        };
        let mix_norm = LayerNorm::new(store, init, &format!("{name}.attn_norm"), d);
        let fusion = if gate {
            Fusion::Gate {
                proj: Linear::new(store, init, &format!("{name}.gate"), 2 * d, d),
            }
        } else {
            Fusion::FeedForward(FeedForward::new(store, init, &format!("{name}.ffn"), d))
        };
        let fusion_norm = LayerNorm::new(store, init, &format!("{name}.fusion_norm"), d);
        GlobalLayer {
            mixer,
            mix_norm,
            fusion,
            fusion_norm,
        }
    }

    pub fn attention(&self) -> &MultiHeadAttention {
        match &self.mixer {
            Mixer::Inter { attn, .. } | Mixer::SelfAttention { attn } => attn,
        }
    }

    /// Inter-attention (or its ablation) followed by residual add and
    /// LayerNorm. Returns `C` and, per utterance block, each head's weights.
    pub fn inter_attention(&self, g: &mut Graph, x: Var, segs: &Segments) -> Result<(Var, Vec<Vec<Var>>)> {
        let mut blocks = Vec::with_capacity(segs.spans.len());
        let mut weights = Vec::with_capacity(segs.spans.len());
        let mixed = match &self.mixer {
            Mixer::Inter { attn, rpe, n_max } => {
                let q = attn.queries(g, x)?;
                let kv = attn.key_values(g, x)?;
                let table = g.p(*rpe);
                let key_pos = segs.row_window_pos();
                for (span, &t) in segs.spans.iter().zip(&segs.window_pos) {
                    let qt = g.tape.slice_rows(q, span.start, span.len())?;
                    let offsets: Vec<usize> = key_pos.iter().map(|&s| s + n_max - 1 - t).collect();
                    let bias = g.tape.embedding_lookup(table, &offsets)?;
                    let (out, w) = attn.attend(g, qt, &kv, Some(bias), &segs.pad)?;
                    blocks.push(out);
                    weights.push(w);
                }
                let heads = g.tape.concat_rows(&blocks)?;
                attn.output.forward(g, heads)?
            }
            Mixer::SelfAttention { attn } => {
                for span in &segs.spans {
                    let xt = g.tape.slice_rows(x, span.start, span.len())?;
                    let (out, w) = attn.forward(g, xt, xt, &segs.pad[span.clone()])?;
                    blocks.push(out);
                    weights.push(w);
                }
                g.tape.concat_rows(&blocks)?
            }
        };
        let c = residual_norm(g, &self.mix_norm, x, mixed)?;
        Ok((c, weights))
    }

    /// Gate between the layer input (`local`) and the mixed representation.
    pub fn gate_fuse(&self, g: &mut Graph, local: Var, global: Var) -> Result<Option<GateOutput>> {
        let Fusion::Gate { proj } = &self.fusion else {
            return Ok(None);
        };
        let cat = g.tape.concat_cols(&[local, global])?;
        let logits = proj.forward(g, cat)?;
        let h = g.tape.sigmoid(logits);
        let keep_global = g.tape.one_minus(h);
        let from_global = g.tape.hadamard(keep_global, global)?;
        let from_local = g.tape.hadamard(h, local)?;
        let fused = g.tape.add(from_global, from_local)?;
        Ok(Some(GateOutput { gate: h, fused }))
    }

    pub fn forward(&self, g: &mut Graph, x: Var, segs: &Segments, trace: Option<&mut EncoderTrace>) -> Result<Var> {
        let (c, weights) = self.inter_attention(g, x, segs)?;
        let (out, gate) = match &self.fusion {
            Fusion::Gate { .. } => {
                let fused = self.gate_fuse(g, x, c)?.expect("gate fusion");
                (self.fusion_norm.forward(g, fused.fused)?, Some(fused.gate))
            }
            Fusion::FeedForward(ffn) => {
                let f = ffn.forward(g, c)?;
                (residual_norm(g, &self.fusion_norm, c, f)?, None)
            }
        };
        if let Some(trace) = trace {
            trace.layers.push(self.layer_trace(g, segs, &weights, gate));
        }
        Ok(out)
    }

    fn layer_trace(&self, g: &Graph, segs: &Segments, weights: &[Vec<Var>], gate: Option<Var>) -> LayerTrace {
        let heads = self.attention().heads;
        let rows = segs.rows();
        let mut attention = vec![0.0; heads * rows * rows];
        let full_keys = matches!(self.mixer, Mixer::Inter { .. });
        for (span, block) in segs.spans.iter().zip(weights) {
            let (k0, width) = if full_keys {
                (0, rows)
            } else {
                (span.start, span.len())
            };
            for (h, &w) in block.iter().enumerate() {
                let vals = g.tape.value(w);
                for (i, q) in span.clone().enumerate() {
                    let dst = (h * rows + q) * rows + k0;
                    attention[dst..dst + width].copy_from_slice(&vals[i * width..(i + 1) * width]);
                }
            }
        }
        LayerTrace {
            heads,
            rows,
            d: gate.map_or(0, |h| g.tape.cols(h)),
            attention,
            gate: gate.map(|h| g.tape.value(h).to_vec()),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GlobalEncoder {
    pub layers: Vec<GlobalLayer>,
}

impl GlobalEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        n_layers: usize,
        d: usize,
        heads: usize,
        n_max: usize,
        inter_attention: bool,
        gate: bool,
    ) -> Self {
        GlobalEncoder {
            layers: (0..n_layers)
                .map(|l| {
                    GlobalLayer::new(store, init, &format!("global.{l}"), d, heads, n_max, inter_attention, gate)
                })
                .collect(),
        }
    }

    /// Adds utterance-position embeddings once, then applies every layer.
    /// With zero layers the input is returned untouched.
    pub fn global_encode(
        &self,
        g: &mut Graph,
        emb: &Embeddings,
        c: Var,
        segs: &Segments,
        mut trace: Option<&mut EncoderTrace>,
    ) -> Result<Var> {
        if self.layers.is_empty() {
            return Ok(c);
        }
        if let Some(t) = trace.as_deref_mut() {
            t.segments = segs.clone();
        }
        let mut x = emb.add_utterance_positions(g, c, &segs.row_window_pos())?;
        for layer in &self.layers {
            x = layer.forward(g, x, segs, trace.as_deref_mut())?;
        }
        Ok(x)
    }
}
