//! The assembled conversation model, its ablation variants, the training
//! objective and greedy generation.

pub mod checkpoint;
pub mod flops;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::ExampleInput;
use crate::decoder::{argmax, Decoder, DecoderInput, GenerationConfig};
use crate::embeddings::Embeddings;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::global_encoder::{EncoderTrace, GlobalEncoder, Segments};
use crate::local_encoder::LocalEncoder;
use crate::params::{accumulate, Graph, Init, ParamStore};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    #[default]
    Lgcm,
    /// Per-utterance self-attention replaces inter-attention.
    NoInterAttention,
    /// A feed-forward sublayer replaces the gate.
    NoGate,
    /// One encoder stack over the concatenated context.
    FlatTransformer,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Lgcm,
        Variant::NoInterAttention,
        Variant::NoGate,
        Variant::FlatTransformer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Lgcm => "LGCM",
            Variant::NoInterAttention => "NO_INTER_ATTENTION",
            Variant::NoGate => "NO_GATE",
            Variant::FlatTransformer => "FLAT_TRANSFORMER",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown model variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LgcmConfig {
    pub d: usize,
    pub heads: usize,
    pub n_local: usize,
    pub n_global: usize,
    pub n_dec: usize,
    pub vocab_size: usize,
    pub n_max: usize,
    pub l_utt_max: usize,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default)]
    pub scale_embeddings: bool,
}

fn default_init_std() -> f64 {
    0.02
}

impl LgcmConfig {
    /// Desk-scale defaults: d = 64, 4 heads, 2/2/2 layers.
    pub fn desk(vocab_size: usize) -> Self {
        LgcmConfig {
            d: 64,
            heads: 4,
            n_local: 2,
            n_global: 2,
            n_dec: 2,
            vocab_size,
            n_max: 7,
            l_utt_max: 32,
            variant: Variant::Lgcm,
            dropout: 0.0,
            seed: 0,
            init_std: default_init_std(),
            scale_embeddings: false,
        }
    }

    /// Base-size configuration: d = 512, 8 heads, 3 local + 3 global
    /// encoder layers and 6 decoder layers, up to 7 context utterances.
    pub fn base(vocab_size: usize) -> Self {
        LgcmConfig {
            d: 512,
            heads: 8,
            n_local: 3,
            n_global: 3,
            n_dec: 6,
            ..Self::desk(vocab_size)
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }

    /// Encoder layers of the flat baseline: as deep as the two
    /// hierarchical stacks together.
    pub fn flat_layers(&self) -> usize {
        self.n_local + self.n_global
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.d == 0 || self.heads == 0 {
            return fail("model.d and model.heads must be positive".into());
        }
        if !self.d.is_multiple_of(self.heads) {
            return fail(format!("model.d = {} is not divisible by heads = {}", self.d, self.heads));
        }
        if self.n_max == 0 {
            return fail("model.n_max must be at least 1".into());
        }
        if self.l_utt_max < 2 {
            return fail("model.l_utt_max must be at least 2".into());
        }
        if self.vocab_size <= crate::data::SPECIALS.len() {
            return fail(format!("model.vocab_size = {} leaves no room for words", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("model.dropout = {} must lie in [0, 1)", self.dropout));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return fail(format!("model.init_std = {} must be finite and non-negative", self.init_std));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Encoder {
    Hierarchical { local: LocalEncoder, global: GlobalEncoder },
    Flat(LocalEncoder),
}

/// Encoder output: every context row (padding included) and its pad flags.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub memory: Var,
    pub pad: Vec<bool>,
}

/// Summed token NLL, token count and mean-loss gradients of a batch.
#[derive(Clone, Debug)]
pub struct LossAndGrads {
    pub nll_sum: f64,
    pub tokens: usize,
    /// Gradient of `nll_sum / tokens`, indexed like the parameter store.
    pub grads: Vec<Vec<f64>>,
}

impl LossAndGrads {
    pub fn mean_loss(&self) -> f64 {
        self.nll_sum / self.tokens as f64
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: LgcmConfig,
    pub params: ParamStore,
    pub embeddings: Embeddings,
    pub encoder: Encoder,
    pub decoder: Decoder,
}

impl Model {
    pub fn build(config: LgcmConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut params = ParamStore::new();
        let mut init = Init::new(c.seed, c.init_std);
        let embeddings = Embeddings::new(
            &mut params,
            &mut init,
            c.vocab_size,
            c.l_utt_max,
            c.n_max,
            c.d,
            c.scale_embeddings,
        );
        let encoder = match c.variant {
            Variant::FlatTransformer => {
                Encoder::Flat(LocalEncoder::named(&mut params, &mut init, "flat", c.flat_layers(), c.d, c.heads))
            }
            v => {
                let local = LocalEncoder::new(&mut params, &mut init, c.n_local, c.d, c.heads);
                let global = GlobalEncoder::new(
                    &mut params,
                    &mut init,
                    c.n_global,
                    c.d,
                    c.heads,
                    c.n_max,
                    v != Variant::NoInterAttention,
                    v != Variant::NoGate,
                );
                Encoder::Hierarchical { local, global }
            }
        };
        let decoder = Decoder::new(&mut params, &mut init, c.n_dec, c.d, c.heads);
        Ok(Model {
            config,
            params,
            embeddings,
            encoder,
            decoder,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::new(&self.params)
    }

    fn check_input(&self, ex: &ExampleInput) -> Result<()> {
        if ex.context.is_empty() {
            return Err(Error::Empty("example has no context utterances".into()));
        }
        if ex.context.len() > self.config.n_max {
            return Err(Error::Validation(format!(
                "{} context utterances exceed n_max = {}",
                ex.context.len(),
                self.config.n_max
            )));
        }
        Ok(())
    }

    /// Runs the encoder over the context of `ex`, recording attention and
    /// gate activations into `trace` when given.
    pub fn encode(&self, g: &mut Graph, ex: &ExampleInput, trace: Option<&mut EncoderTrace>) -> Result<Encoded> {
        self.check_input(ex)?;
        let mut embedded = Vec::with_capacity(ex.context.len());
        for u in &ex.context {
            embedded.push(self.embeddings.embed_utterance(g, &u.ids, u.role, &u.positions)?);
        }
        let mut spans = Vec::with_capacity(ex.context.len());
        let mut at = 0;
        for u in &ex.context {
            spans.push(at..at + u.len());
            at += u.len();
        }
        let segs = Segments {
            spans,
            window_pos: ex.context.iter().map(|u| u.window_pos).collect(),
            pad: ex.context.iter().flat_map(|u| u.pad.iter().copied()).collect(),
        };
        let memory = match &self.encoder {
            Encoder::Hierarchical { local, global } => {
                let inputs: Vec<(Var, &[bool])> = embedded
                    .iter()
                    .zip(&ex.context)
                    .map(|(&x, u)| (x, u.pad.as_slice()))
                    .collect();
                let c = local.encode_locally(g, &inputs)?;
                let c = g.tape.concat_rows(&c)?;
                global.global_encode(g, &self.embeddings, c, &segs, trace)?
            }
            Encoder::Flat(stack) => {
                let x = g.tape.concat_rows(&embedded)?;
                let x = self.embeddings.add_utterance_positions(g, x, &segs.row_window_pos())?;
                stack.encode_one(g, x, &segs.pad)?
            }
        };
        Ok(Encoded { memory, pad: segs.pad })
    }

    /// Logits `[L_resp × V]` for the response inputs of `ex`.
    pub fn decode(&self, g: &mut Graph, enc: &Encoded, ids: &[usize], pad: &[bool], role: usize) -> Result<Var> {
        self.decoder.decode_forward(
            g,
            &self.embeddings,
            DecoderInput { ids, pad, role },
            enc.memory,
            &enc.pad,
        )
    }

    /// Teacher-forced logits for `ex`.
    pub fn logits(&self, ex: &ExampleInput) -> Result<Tensor> {
        let mut g = self.graph();
        let enc = self.encode(&mut g, ex, None)?;
        let logits = self.decode(&mut g, &enc, &ex.response_input, &ex.response_pad, ex.response_role)?;
        Ok(g.tape.to_tensor(logits))
    }

    /// Summed NLL over the unpadded response targets of `ex`.
    pub fn example_nll(&self, g: &mut Graph, ex: &ExampleInput) -> Result<Var> {
        let enc = self.encode(g, ex, None)?;
        let logits = self.decode(g, &enc, &ex.response_input, &ex.response_pad, ex.response_role)?;
        g.tape.nll_sum(logits, &ex.targets())
    }

    /// Summed NLL and target-token count over `examples`, without gradients.
    pub fn nll_stats(&self, examples: &[ExampleInput], exec: Execution) -> Result<(f64, usize)> {
        let per = exec.map(examples, |ex| -> Result<(f64, usize)> {
            let mut g = self.graph();
            let nll = self.example_nll(&mut g, ex)?;
            Ok((g.tape.value(nll)[0], ex.n_targets()))
        });
        let mut total = (0.0, 0);
        for r in per {
            let (nll, n) = r?;
            total.0 += nll;
            total.1 += n;
        }
        Ok(total)
    }

    /// Mean NLL over the unpadded response tokens of `batch`.
    pub fn forward_loss(&self, batch: &crate::data::Batch) -> Result<f64> {
        if batch.n_targets() == 0 {
            return Err(Error::Empty("batch has no response target tokens".into()));
        }
        let (nll, n) = self.nll_stats(&batch.examples(), Execution::Sequential)?;
        Ok(nll / n as f64)
    }

    /// Mean loss and its gradients. Each example runs on its own tape;
    /// per-example gradients are summed in input order, so the result does
    /// not depend on `exec`. `dropout_seed` enables dropout (at the
    /// configured rate) with a per-example stream derived from it.
    pub fn loss_and_grads(
        &self,
        examples: &[ExampleInput],
        exec: Execution,
        dropout_seed: Option<u64>,
    ) -> Result<LossAndGrads> {
        let tokens: usize = examples.iter().map(ExampleInput::n_targets).sum();
        if tokens == 0 {
            return Err(Error::Empty("batch has no response target tokens".into()));
        }
        let indexed: Vec<(usize, &ExampleInput)> = examples.iter().enumerate().collect();
        let per = exec.map(&indexed, |&(i, ex)| -> Result<(f64, Vec<Vec<f64>>)> {
            let mut g = match dropout_seed {
                Some(seed) if self.config.dropout > 0.0 => {
                    self.graph().with_dropout(self.config.dropout, example_seed(seed, i))
                }
                _ => self.graph(),
            };
            let nll = self.example_nll(&mut g, ex)?;
            let grads = g.backward(nll)?;
            let mut acc = self.params.zeros_like();
            accumulate(&mut acc, &grads);
            Ok((g.tape.value(nll)[0], acc))
        });
        let mut nll_sum = 0.0;
        let mut total = self.params.zeros_like();
        for r in per {
            let (nll, grads) = r?;
            nll_sum += nll;
            for (t, g) in total.iter_mut().zip(&grads) {
                t.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
        }
        let inv = 1.0 / tokens as f64;
        total.iter_mut().flatten().for_each(|v| *v *= inv);
        Ok(LossAndGrads {
            nll_sum,
            tokens,
            grads: total,
        })
    }

    /// Greedy decoding from `[bos]`: the context is encoded once, then the
    /// full prefix is re-decoded at every step. Returns the generated
    /// content tokens (without `[bos]` and the stop token).
    pub fn greedy_generate(&self, ex: &ExampleInput, cfg: &GenerationConfig) -> Result<Vec<usize>> {
        cfg.validate()?;
        let mut g = self.graph();
        let enc = self.encode(&mut g, ex, None)?;
        let mut prefix = vec![crate::data::BOS];
        // token positions stop at l_utt_max − 1
        let budget = cfg.max_new_tokens.min(self.config.l_utt_max - 1);
        let mut out = Vec::new();
        for _ in 0..budget {
            let pad = vec![false; prefix.len()];
            let mark = g.mark();
            let logits = self.decode(&mut g, &enc, &prefix, &pad, ex.response_role)?;
            let v = self.config.vocab_size;
            let last = &g.tape.value(logits)[(prefix.len() - 1) * v..];
            let next = argmax(last);
            g.rewind(mark);
            if next == cfg.stop_token {
                break;
            }
            out.push(next);
            prefix.push(next);
        }
        Ok(out)
    }

    pub fn generate_all(
        &self,
        inputs: &[ExampleInput],
        cfg: &GenerationConfig,
        exec: Execution,
    ) -> Result<Vec<Vec<usize>>> {
        exec.map(inputs, |ex| self.greedy_generate(ex, cfg)).into_iter().collect()
    }

    /// Attention and gate activations of every global layer for `ex`.
    pub fn encoder_trace(&self, ex: &ExampleInput) -> Result<EncoderTrace> {
        let mut g = self.graph();
        let mut trace = EncoderTrace::default();
        self.encode(&mut g, ex, Some(&mut trace))?;
        Ok(trace)
    }
}

/// Decorrelated per-example seed.
fn example_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
