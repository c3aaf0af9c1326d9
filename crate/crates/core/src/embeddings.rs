//! Token, token-position, role and utterance-position tables. The token
//! table doubles as the output projection.

use crate::error::Result;
use crate::params::{Graph, Init, ParamId, ParamStore};
use crate::tensor::Var;

#[derive(Clone, Debug)]
pub struct Embeddings {
    pub token: ParamId,
    pub position: ParamId,
    pub role: ParamId,
    pub utterance: ParamId,
    pub d: usize,
    pub scale_tokens: bool,
}

impl Embeddings {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        vocab: usize,
        l_utt_max: usize,
        n_max: usize,
        d: usize,
        scale_tokens: bool,
    ) -> Self {
        Embeddings {
            token: store.add("emb.token", init.normal(vec![vocab, d])),
            position: store.add("emb.position", init.normal(vec![l_utt_max, d])),
            role: store.add("emb.role", init.normal(vec![2, d])),
            utterance: store.add("emb.utterance", init.normal(vec![n_max, d])),
            d,
            scale_tokens,
        }
    }

    /// Row i = E[ids[i]] + p[positions[i]] + r[role].
    pub fn embed_utterance(
        &self,
        g: &mut Graph,
        ids: &[usize],
        role: usize,
        positions: &[usize],
    ) -> Result<Var> {
        let (tok, pos, rol) = (g.p(self.token), g.p(self.position), g.p(self.role));
        let mut e = g.tape.embedding_lookup(tok, ids)?;
        if self.scale_tokens {
            e = g.tape.scale(e, (self.d as f64).sqrt());
        }
        let p = g.tape.embedding_lookup(pos, positions)?;
        let r = g.tape.embedding_lookup(rol, &vec![role; ids.len()])?;
        let ep = g.tape.add(e, p)?;
        g.tape.add(ep, r)
    }

    /// Adds `p_u[window_pos[i]]` to row i.
    pub fn add_utterance_positions(&self, g: &mut Graph, x: Var, window_pos: &[usize]) -> Result<Var> {
        let table = g.p(self.utterance);
        let pu = g.tape.embedding_lookup(table, window_pos)?;
        g.tape.add(x, pu)
    }

    /// `hidden · Eᵀ`
    pub fn output_logits(&self, g: &mut Graph, hidden: Var) -> Result<Var> {
        let tok = g.p(self.token);
        g.tape.matmul_nt(hidden, tok)
    }
}
