use std::collections::HashMap;
use std::path::Path;

use super::{Dialog, TextDialog, TextUtterance, Utterance};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["[pad]", "[bos]", "[eos]", "[unk]"];

/// Token/id bijection. Ids `0..4` are the fixed specials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps tokens seen at least `min_freq` times, ordered by descending
    /// frequency and then lexicographically.
    pub fn build(dialogs: &[TextDialog], min_freq: usize) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut seen_any = false;
        for turn in dialogs.iter().flat_map(|d| &d.turns) {
            for tok in &turn.tokens {
                seen_any = true;
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        if !seen_any {
            return Err(Error::Empty("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut kept: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Ok(Self::from_tokens(
            SPECIALS
                .iter()
                .map(|s| s.to_string())
                .chain(kept.into_iter().map(|(t, _)| t.to_string()))
                .collect(),
        ))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(SPECIALS[UNK], String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Wraps content ids in `[bos]`/`[eos]`.
    pub fn encode_utterance(&self, turn: &TextUtterance) -> Utterance {
        let mut ids = Vec::with_capacity(turn.tokens.len() + 2);
        ids.push(BOS);
        ids.extend(turn.tokens.iter().map(|t| self.id(t)));
        ids.push(EOS);
        Utterance {
            speaker: turn.speaker,
            tokens: ids,
        }
    }

    pub fn encode_dialog(&self, dialog: &TextDialog) -> Dialog {
        Dialog {
            utterances: dialog
                .turns
                .iter()
                .map(|t| self.encode_utterance(t))
                .collect(),
        }
    }

    /// Content tokens of an id sequence: specials other than `[unk]` are dropped.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.token(id).to_string())
            .collect()
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        for (i, special) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*special) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected special token {special}"),
                });
            }
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Parse {
                line: 0,
                msg: "duplicate token in vocabulary file".into(),
            });
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
