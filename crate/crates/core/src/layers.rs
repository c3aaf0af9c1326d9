//! Building blocks shared by the encoders and the decoder.

use crate::error::Result;
use crate::params::{Graph, Init, ParamId, ParamStore};
use crate::tensor::Var;

pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, d_in: usize, d_out: usize) -> Self {
        Linear {
            w: store.add(format!("{name}.w"), init.normal(vec![d_in, d_out])),
            b: store.add(format!("{name}.b"), init.zeros(vec![d_out])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.p(self.w), g.p(self.b));
        let y = g.tape.matmul(x, w)?;
        g.tape.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), init.ones(vec![d])),
            bias: store.add(format!("{name}.bias"), init.zeros(vec![d])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gain, bias) = (g.p(self.gain), g.p(self.bias));
        g.tape.layer_norm(x, gain, bias, LN_EPS)
    }
}

/// Position-wise `d → 4d → d` network with ReLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, d: usize) -> Self {
        FeedForward {
            inner: Linear::new(store, init, &format!("{name}.inner"), d, 4 * d),
            outer: Linear::new(store, init, &format!("{name}.outer"), 4 * d, d),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.inner.forward(g, x)?;
        let h = g.tape.relu(h);
        self.outer.forward(g, h)
    }
}

/// Multi-head attention weights. Query/key/value projections are applied
/// once per sequence; [`MultiHeadAttention::attend`] then mixes any block of
/// query rows against the full key set.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

/// Projected key/value rows, split per head.
pub struct KeyValues {
    pub keys: Vec<Var>,
    pub values: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, init: &mut Init, name: &str, d: usize, heads: usize) -> Self {
        MultiHeadAttention {
            query: Linear::new(store, init, &format!("{name}.query"), d, d),
            key: Linear::new(store, init, &format!("{name}.key"), d, d),
            value: Linear::new(store, init, &format!("{name}.value"), d, d),
            output: Linear::new(store, init, &format!("{name}.output"), d, d),
            heads,
        }
    }

    pub fn head_dim(&self, g: &Graph, x: Var) -> usize {
        g.tape.cols(x) / self.heads
    }

    pub fn queries(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.query.forward(g, x)
    }

    pub fn key_values(&self, g: &mut Graph, memory: Var) -> Result<KeyValues> {
        let k = self.key.forward(g, memory)?;
        let v = self.value.forward(g, memory)?;
        let dh = self.head_dim(g, memory);
        let mut keys = Vec::with_capacity(self.heads);
        let mut values = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            keys.push(g.tape.slice_cols(k, h * dh, dh)?);
            values.push(g.tape.slice_cols(v, h * dh, dh)?);
        }
        Ok(KeyValues { keys, values })
    }

    /// Scaled dot-product attention of projected queries `q` against `kv`.
    /// `key_bias` (`[keys × d/h]`, shared by all heads) is added to every
    /// head's keys. `mask` is true where a key is excluded, given per key or
    /// per (query, key). Returns the concatenated head outputs (before the
    /// output projection) and each head's weight matrix.
    pub fn attend(
        &self,
        g: &mut Graph,
        q: Var,
        kv: &KeyValues,
        key_bias: Option<Var>,
        mask: &[bool],
    ) -> Result<(Var, Vec<Var>)> {
        let dh = g.tape.cols(q) / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.tape.slice_cols(q, h * dh, dh)?;
            let kh = match key_bias {
                Some(bias) => g.tape.add(kv.keys[h], bias)?,
                None => kv.keys[h],
            };
            let scores = g.tape.matmul_nt(qh, kh)?;
            let scores = g.tape.scale(scores, scale);
            let alpha = g.tape.masked_softmax(scores, mask)?;
            outs.push(g.tape.matmul(alpha, kv.values[h])?);
            weights.push(alpha);
        }
        let out = if outs.len() == 1 {
            outs[0]
        } else {
            g.tape.concat_cols(&outs)?
        };
        Ok((out, weights))
    }

    /// Full self- or cross-attention including the output projection.
    pub fn forward(&self, g: &mut Graph, x: Var, memory: Var, mask: &[bool]) -> Result<(Var, Vec<Var>)> {
        let q = self.queries(g, x)?;
        let kv = self.key_values(g, memory)?;
        let (heads, weights) = self.attend(g, q, &kv, None, mask)?;
        Ok((self.output.forward(g, heads)?, weights))
    }
}

/// `LayerNorm(x + sublayer)`, with dropout on the sublayer output.
pub fn residual_norm(g: &mut Graph, norm: &LayerNorm, x: Var, sub: Var) -> Result<Var> {
    let sub = g.dropout(sub)?;
    let sum = g.tape.add(x, sub)?;
    norm.forward(g, sum)
}

/// Causal + padding mask for `n` positions: entry (i, j) is excluded when
/// `j > i` or key `j` is padding.
pub fn causal_mask(pad: &[bool]) -> Vec<bool> {
    let n = pad.len();
    (0..n * n).map(|k| k % n > k / n || pad[k % n]).collect()
}
