//! Corpus ingestion, tokenization, vocabulary, context windowing and batching.

mod batch;
mod tokenize;
mod vocab;

pub use batch::{collate, Batch, ContextUtterance, ExampleInput};
pub use tokenize::{detokenize, normalize, tokenize};
pub use vocab::{Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    A,
    B,
}

impl Role {
    pub fn index(self) -> usize {
        match self {
            Role::A => 0,
            Role::B => 1,
        }
    }

    pub fn other(self) -> Role {
        match self {
            Role::A => Role::B,
            Role::B => Role::A,
        }
    }
}

/// A tokenized turn before vocabulary lookup (content tokens only).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextUtterance {
    pub speaker: Role,
    pub tokens: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextDialog {
    pub turns: Vec<TextUtterance>,
}

/// Token ids, starting with `[bos]` and ending with `[eos]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub speaker: Role,
    pub tokens: Vec<usize>,
}

impl Utterance {
    pub fn content(&self) -> &[usize] {
        &self.tokens[1..self.tokens.len() - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialog {
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingExample {
    pub context: Vec<Utterance>,
    pub response: Utterance,
    pub response_role: Role,
}

#[derive(Deserialize)]
struct Record {
    dialog: Vec<Turn>,
}

#[derive(Deserialize)]
struct Turn {
    speaker: Role,
    text: String,
}

pub fn load_jsonl(path: &Path) -> Result<Vec<TextDialog>> {
    let file = std::fs::File::open(path)?;
    parse_jsonl(std::io::BufReader::new(file))
}

/// One `{"dialog": [{"speaker": "A"|"B", "text": ...}, ...]}` record per
/// line. Blank lines are skipped.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Vec<TextDialog>> {
    let mut dialogs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        dialogs.push(validate(record, line_no, 2)?);
    }
    Ok(dialogs)
}

/// A generation context: exactly one record in the corpus format, which
/// may hold a single turn.
pub fn parse_context<R: BufRead>(reader: R) -> Result<TextDialog> {
    let mut found = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if found.is_some() {
            return Err(Error::Validation(format!("line {line_no}: a context file holds exactly one dialog")));
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        found = Some(validate(record, line_no, 1)?);
    }
    found.ok_or_else(|| Error::Empty("context file holds no dialog".into()))
}

fn validate(record: Record, line_no: usize, min_turns: usize) -> Result<TextDialog> {
    if record.dialog.len() < min_turns {
        return Err(Error::Validation(format!(
            "line {line_no}: a dialog needs at least {min_turns} turns, got {}",
            record.dialog.len()
        )));
    }
    for (k, pair) in record.dialog.windows(2).enumerate() {
        if pair[0].speaker == pair[1].speaker {
            return Err(Error::Validation(format!(
                "line {line_no}: turns {} and {} share speaker {:?}",
                k + 1,
                k + 2,
                pair[1].speaker
            )));
        }
    }
    Ok(TextDialog {
        turns: record
            .dialog
            .into_iter()
            .map(|t| TextUtterance {
                speaker: t.speaker,
                tokens: tokenize(&t.text),
            })
            .collect(),
    })
}

/// One example per response turn `t ∈ 2..=T` (1-based); the context is the
/// up-to-`n_max` turns immediately before it.
pub fn make_examples(dialog: &Dialog, n_max: usize) -> Vec<TrainingExample> {
    let turns = &dialog.utterances;
    (1..turns.len())
        .map(|t| {
            let start = t.saturating_sub(n_max);
            TrainingExample {
                context: turns[start..t].to_vec(),
                response: turns[t].clone(),
                response_role: turns[t].speaker,
            }
        })
        .collect()
}

pub fn examples_from_corpus(
    dialogs: &[TextDialog],
    vocab: &Vocabulary,
    n_max: usize,
) -> Vec<TrainingExample> {
    dialogs
        .iter()
        .flat_map(|d| make_examples(&vocab.encode_dialog(d), n_max))
        .collect()
}
