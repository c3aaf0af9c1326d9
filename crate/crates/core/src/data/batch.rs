use super::{TrainingExample, Utterance, BOS, EOS, PAD};
use crate::error::{Error, Result};

/// One context utterance as the model consumes it. `pad[i]` is true where
/// `ids[i]` is padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextUtterance {
    pub ids: Vec<usize>,
    pub pad: Vec<bool>,
    pub role: usize,
    pub positions: Vec<usize>,
    /// Oldest-first index inside the context window.
    pub window_pos: usize,
}

impl ContextUtterance {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.pad.iter().filter(|p| !**p).count()
    }
}

/// A single example's model inputs, possibly carrying padding.
#[derive(Clone, Debug, PartialEq)]
pub struct ExampleInput {
    pub context: Vec<ContextUtterance>,
    pub response_role: usize,
    /// `[bos] + content`
    pub response_input: Vec<usize>,
    /// `content + [eos]`, aligned so input position i predicts target i.
    pub response_target: Vec<usize>,
    pub response_pad: Vec<bool>,
}

impl ExampleInput {
    /// Unpadded inputs, truncating over-long utterances to `l_utt_max`
    /// tokens (the final `[eos]` is kept).
    pub fn new(example: &TrainingExample, l_utt_max: usize) -> Self {
        let context = example
            .context
            .iter()
            .enumerate()
            .map(|(pos, u)| {
                let ids = truncated(u, l_utt_max);
                ContextUtterance {
                    pad: vec![false; ids.len()],
                    positions: (0..ids.len()).collect(),
                    role: u.speaker.index(),
                    window_pos: pos,
                    ids,
                }
            })
            .collect();
        let resp = truncated(&example.response, l_utt_max);
        let n = resp.len() - 1;
        ExampleInput {
            context,
            response_role: example.response_role.index(),
            response_input: resp[..n].to_vec(),
            response_target: resp[1..].to_vec(),
            response_pad: vec![false; n],
        }
    }

    /// Context-only input for generation; the response starts as `[bos]`.
    pub fn for_generation(context: &[Utterance], response_role: usize, l_utt_max: usize) -> Self {
        let ctx = context
            .iter()
            .enumerate()
            .map(|(pos, u)| {
                let ids = truncated(u, l_utt_max);
                ContextUtterance {
                    pad: vec![false; ids.len()],
                    positions: (0..ids.len()).collect(),
                    role: u.speaker.index(),
                    window_pos: pos,
                    ids,
                }
            })
            .collect();
        ExampleInput {
            context: ctx,
            response_role,
            response_input: vec![BOS],
            response_target: vec![PAD],
            response_pad: vec![false],
        }
    }

    pub fn targets(&self) -> Vec<Option<usize>> {
        self.response_target
            .iter()
            .zip(&self.response_pad)
            .map(|(&t, &p)| (!p).then_some(t))
            .collect()
    }

    pub fn n_targets(&self) -> usize {
        self.response_pad.iter().filter(|p| !**p).count()
    }

    pub fn response_positions(&self) -> Vec<usize> {
        (0..self.response_input.len()).collect()
    }

    /// Total number of context rows (padding included).
    pub fn context_rows(&self) -> usize {
        self.context.iter().map(ContextUtterance::len).sum()
    }
}

fn truncated(u: &Utterance, l_utt_max: usize) -> Vec<usize> {
    if u.tokens.len() <= l_utt_max {
        return u.tokens.clone();
    }
    log::warn!(
        "truncating utterance of {} tokens to {}",
        u.tokens.len(),
        l_utt_max
    );
    let mut ids = u.tokens[..l_utt_max - 1].to_vec();
    ids.push(EOS);
    ids
}

/// Padded batch. Context tensors are `[size × n_ctx × utt_len]`, response
/// tensors `[size × resp_len]`; pad masks are true exactly at padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub n_ctx: usize,
    pub utt_len: usize,
    pub resp_len: usize,
    pub context_ids: Vec<usize>,
    pub context_pad: Vec<bool>,
    pub context_roles: Vec<usize>,
    pub token_positions: Vec<usize>,
    pub utterance_positions: Vec<usize>,
    /// `[size × n_ctx]`, false for padding utterances.
    pub context_present: Vec<bool>,
    pub response_input: Vec<usize>,
    pub response_target: Vec<usize>,
    pub response_pad: Vec<bool>,
    pub response_roles: Vec<usize>,
}

pub fn collate(examples: &[TrainingExample], l_utt_max: usize) -> Result<Batch> {
    if examples.is_empty() {
        return Err(Error::Empty("collate needs at least one example".into()));
    }
    if l_utt_max < 2 {
        return Err(Error::Config("l_utt_max must be at least 2".into()));
    }
    let inputs: Vec<ExampleInput> = examples
        .iter()
        .map(|e| ExampleInput::new(e, l_utt_max))
        .collect();
    let size = inputs.len();
    let n_ctx = inputs.iter().map(|x| x.context.len()).max().unwrap_or(0);
    let utt_len = inputs
        .iter()
        .flat_map(|x| x.context.iter().map(ContextUtterance::len))
        .max()
        .unwrap_or(0);
    let resp_len = inputs
        .iter()
        .map(|x| x.response_input.len())
        .max()
        .unwrap_or(0);

    let ctx_cells = size * n_ctx * utt_len;
    let mut b = Batch {
        size,
        n_ctx,
        utt_len,
        resp_len,
        context_ids: vec![PAD; ctx_cells],
        context_pad: vec![true; ctx_cells],
        context_roles: vec![0; size * n_ctx],
        token_positions: (0..ctx_cells).map(|i| i % utt_len.max(1)).collect(),
        utterance_positions: vec![0; size * n_ctx],
        context_present: vec![false; size * n_ctx],
        response_input: vec![PAD; size * resp_len],
        response_target: vec![PAD; size * resp_len],
        response_pad: vec![true; size * resp_len],
        response_roles: vec![0; size],
    };
    for (bi, x) in inputs.iter().enumerate() {
        for (ni, u) in x.context.iter().enumerate() {
            let slot = bi * n_ctx + ni;
            b.context_roles[slot] = u.role;
            b.utterance_positions[slot] = u.window_pos;
            b.context_present[slot] = true;
            let base = slot * utt_len;
            b.context_ids[base..base + u.len()].copy_from_slice(&u.ids);
            b.context_pad[base..base + u.len()].fill(false);
        }
        let base = bi * resp_len;
        let n = x.response_input.len();
        b.response_input[base..base + n].copy_from_slice(&x.response_input);
        b.response_target[base..base + n].copy_from_slice(&x.response_target);
        b.response_pad[base..base + n].fill(false);
        b.response_roles[bi] = x.response_role;
    }
    Ok(b)
}

impl Batch {
    /// The `b`-th example with its padding kept. Padding utterances (no real
    /// tokens) are dropped.
    pub fn example(&self, b: usize) -> ExampleInput {
        let context = (0..self.n_ctx)
            .filter(|&n| self.context_present[b * self.n_ctx + n])
            .map(|n| {
                let slot = b * self.n_ctx + n;
                let span = slot * self.utt_len..(slot + 1) * self.utt_len;
                ContextUtterance {
                    ids: self.context_ids[span.clone()].to_vec(),
                    pad: self.context_pad[span.clone()].to_vec(),
                    role: self.context_roles[slot],
                    positions: self.token_positions[span].to_vec(),
                    window_pos: self.utterance_positions[slot],
                }
            })
            .collect();
        let span = b * self.resp_len..(b + 1) * self.resp_len;
        ExampleInput {
            context,
            response_role: self.response_roles[b],
            response_input: self.response_input[span.clone()].to_vec(),
            response_target: self.response_target[span.clone()].to_vec(),
            response_pad: self.response_pad[span].to_vec(),
        }
    }

    pub fn examples(&self) -> Vec<ExampleInput> {
        (0..self.size).map(|b| self.example(b)).collect()
    }

    pub fn n_targets(&self) -> usize {
        self.response_pad.iter().filter(|p| !**p).count()
    }
}
