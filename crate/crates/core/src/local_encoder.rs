//! Standard post-LN transformer encoder layers. The local encoder runs one
//! shared stack over each context utterance independently.

use crate::error::Result;
use crate::layers::{residual_norm, FeedForward, LayerNorm, MultiHeadAttention};
use crate::params::{Graph, Init, ParamStore};
use crate::tensor::Var;

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub attn_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, d: usize, heads: usize) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::new(store, init, &format!("{name}.attn"), d, heads),
            attn_norm: LayerNorm::new(store, init, &format!("{name}.attn_norm"), d),
            ffn: FeedForward::new(store, init, &format!("{name}.ffn"), d),
            ffn_norm: LayerNorm::new(store, init, &format!("{name}.ffn_norm"), d),
        }
    }

    /// Self-attention over `x` with padded keys masked, then the FFN.
    pub fn forward(&self, g: &mut Graph, x: Var, pad: &[bool]) -> Result<Var> {
        let (a, _) = self.attn.forward(g, x, x, pad)?;
        let x = residual_norm(g, &self.attn_norm, x, a)?;
        let f = self.ffn.forward(g, x)?;
        residual_norm(g, &self.ffn_norm, x, f)
    }
}

#[derive(Clone, Debug, Default)]
pub struct LocalEncoder {
    pub layers: Vec<EncoderLayer>,
}

impl LocalEncoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, n_layers: usize, d: usize, heads: usize) -> Self {
        Self::named(store, init, "local", n_layers, d, heads)
    }

    /// A stack whose parameters are named `{prefix}.{layer}.…`.
    pub fn named(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        n_layers: usize,
        d: usize,
        heads: usize,
    ) -> Self {
        LocalEncoder {
            layers: (0..n_layers)
                .map(|l| EncoderLayer::new(store, init, &format!("{prefix}.{l}"), d, heads))
                .collect(),
        }
    }

    /// Encodes one utterance through every layer.
    pub fn encode_one(&self, g: &mut Graph, x: Var, pad: &[bool]) -> Result<Var> {
        self.layers.iter().try_fold(x, |h, layer| layer.forward(g, h, pad))
    }

    /// Encodes each utterance on its own with the shared parameters; no
    /// information crosses utterance boundaries.
    pub fn encode_locally(&self, g: &mut Graph, utterances: &[(Var, &[bool])]) -> Result<Vec<Var>> {
        utterances
            .iter()
            .map(|&(x, pad)| self.encode_one(g, x, pad))
            .collect()
    }
}
