//! Synthetic copy/reverse dialogs small enough to memorize in a few
//! hundred steps. Used by tests, benchmarks and the CLI smoke run.
//!
//! Each dialog has three turns: A says 3–5 distinct words, B repeats them,
//! A says them in reverse order. Every response is a deterministic function
//! of its context, so a model that fits the set reaches perplexity ≈ 1.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{examples_from_corpus, ExampleInput, Role, TextDialog, TextUtterance, Vocabulary};
use crate::error::Result;

pub const WORDS: [&str; 16] = [
    "apple", "river", "stone", "cloud", "green", "music", "table", "light", "paper", "sugar", "horse", "water",
    "smile", "train", "bread", "night",
];

pub fn dialogs(count: usize, seed: u64) -> Vec<TextDialog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let len = rng.random_range(3..=5);
            let mut pool = WORDS;
            pool.shuffle(&mut rng);
            let words: Vec<String> = pool[..len].iter().map(|w| w.to_string()).collect();
            let reversed: Vec<String> = words.iter().rev().cloned().collect();
            TextDialog {
                turns: vec![
                    TextUtterance {
                        speaker: Role::A,
                        tokens: words.clone(),
                    },
                    TextUtterance {
                        speaker: Role::B,
                        tokens: words,
                    },
                    TextUtterance {
                        speaker: Role::A,
                        tokens: reversed,
                    },
                ],
            }
        })
        .collect()
}

/// The standard fixture: 32 dialogs.
pub fn standard() -> Vec<TextDialog> {
    dialogs(32, 0)
}

/// JSONL text for `dialogs`, one record per line.
pub fn to_jsonl(dialogs: &[TextDialog]) -> String {
    let mut out = String::new();
    for d in dialogs {
        let turns: Vec<serde_json::Value> = d
            .turns
            .iter()
            .map(|t| {
                serde_json::json!({
                    "speaker": match t.speaker { Role::A => "A", Role::B => "B" },
                    "text": t.tokens.join(" "),
                })
            })
            .collect();
        out.push_str(&serde_json::json!({ "dialog": turns }).to_string());
        out.push('\n');
    }
    out
}

/// Vocabulary and unpadded model inputs for `dialogs`.
pub fn prepare(dialogs: &[TextDialog], n_max: usize, l_utt_max: usize) -> Result<(Vocabulary, Vec<ExampleInput>)> {
    let vocab = Vocabulary::build(dialogs, 1)?;
    let inputs = examples_from_corpus(dialogs, &vocab, n_max)
        .iter()
        .map(|ex| ExampleInput::new(ex, l_utt_max))
        .collect();
    Ok((vocab, inputs))
}
