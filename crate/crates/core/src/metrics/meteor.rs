//! METEOR with exact and stem matching stages (no synonym stage).
//!
//! Each stage aligns still-unmatched words: the number of matches is
//! maximal, and among maximal alignments the one giving the fewest chunks
//! (maximal runs adjacent and in order on both sides) is chosen. The
//! sentence score is `F_mean·(1 − γ·(chunks/matches)^β)` with
//! `F_mean = P·R / (α·P + (1 − α)·R)`; the corpus score is the mean
//! sentence score.

use rust_stemmers::{Algorithm, Stemmer};

use super::EvalPair;

pub const ALPHA: f64 = 0.9;
pub const BETA: f64 = 3.0;
pub const GAMMA: f64 = 0.5;

/// Search-node budget per stage; beyond it the best alignment found so
/// far is used.
const SEARCH_BUDGET: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeteorOptions {
    pub stem: bool,
}

impl Default for MeteorOptions {
    fn default() -> Self {
        MeteorOptions { stem: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Alignment {
    /// `target[i]` is the reference index matched to hypothesis word `i`.
    pub target: Vec<Option<usize>>,
}

impl Alignment {
    pub fn matches(&self) -> usize {
        self.target.iter().flatten().count()
    }

    pub fn chunks(&self) -> usize {
        chunk_count(&self.target)
    }
}

fn chunk_count(target: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for t in target {
        match (*t, prev) {
            (Some(j), Some(p)) if j == p + 1 => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        prev = *t;
    }
    chunks
}

struct Search<'s> {
    keys_h: &'s [Option<String>],
    candidates: Vec<Vec<usize>>,
    /// How many more matches each hypothesis suffix can still contribute.
    quota: Vec<usize>,
    target: Vec<Option<usize>>,
    used: Vec<bool>,
    best: Option<(usize, Vec<Option<usize>>)>,
    /// Number of new matches a complete alignment must reach.
    goal: usize,
    nodes: usize,
}

impl Search<'_> {
    fn run(&mut self, i: usize, matched: usize, chunks: usize) {
        self.nodes += 1;
        if self.nodes > SEARCH_BUDGET && self.best.is_some() {
            return;
        }
        if let Some((b, _)) = &self.best {
            if chunks >= *b {
                return;
            }
        }
        if i == self.keys_h.len() {
            if matched == self.goal {
                self.best = Some((chunks, self.target.clone()));
            }
            return;
        }
        if matched + self.quota[i] < self.goal {
            return;
        }
        let prev = if i > 0 { self.target[i - 1] } else { None };
        if self.target[i].is_some() {
            let j = self.target[i].expect("fixed");
            let extra = usize::from(prev.is_none_or(|p| p + 1 != j));
            self.run(i + 1, matched, chunks + extra);
            return;
        }
        // prefer continuing the current chunk
        let mut order = self.candidates[i].clone();
        if let Some(p) = prev {
            order.sort_by_key(|&j| (j != p + 1, j));
        }
        for j in order {
            if self.used[j] {
                continue;
            }
            self.used[j] = true;
            self.target[i] = Some(j);
            let extra = usize::from(prev.is_none_or(|p| p + 1 != j));
            self.run(i + 1, matched + 1, chunks + extra);
            self.target[i] = None;
            self.used[j] = false;
        }
        self.run(i + 1, matched, chunks);
    }
}

/// Adds one matching stage on top of `fixed`, comparing words through
/// `key` (None = word not eligible).
fn align_stage(fixed: &Alignment, keys_h: &[Option<String>], keys_r: &[Option<String>]) -> Alignment {
    let mut used = vec![false; keys_r.len()];
    for j in fixed.target.iter().flatten() {
        used[*j] = true;
    }
    let candidates: Vec<Vec<usize>> = keys_h
        .iter()
        .enumerate()
        .map(|(i, k)| match (k, fixed.target[i]) {
            (Some(k), None) => (0..keys_r.len())
                .filter(|&j| !used[j] && keys_r[j].as_ref() == Some(k))
                .collect(),
            _ => Vec::new(),
        })
        .collect();
    // maximal matches per key = min(free hyp count, free ref count)
    let mut goal = 0;
    let mut seen = std::collections::BTreeSet::new();
    for (i, k) in keys_h.iter().enumerate() {
        if let (Some(k), false) = (k, candidates[i].is_empty()) {
            if seen.insert(k.clone()) {
                let nh = keys_h
                    .iter()
                    .enumerate()
                    .filter(|(a, kk)| kk.as_ref() == Some(k) && fixed.target[*a].is_none())
                    .count();
                goal += nh.min(candidates[i].len());
            }
        }
    }
    let mut quota = vec![0; keys_h.len() + 1];
    for i in (0..keys_h.len()).rev() {
        quota[i] = quota[i + 1] + usize::from(!candidates[i].is_empty());
    }
    let mut search = Search {
        keys_h,
        candidates,
        quota,
        target: fixed.target.clone(),
        used,
        best: None,
        goal,
        nodes: 0,
    };
    search.run(0, 0, 0);
    Alignment {
        target: search.best.map(|b| b.1).unwrap_or_else(|| fixed.target.clone()),
    }
}

pub fn align(hyp: &[String], reference: &[String], opts: MeteorOptions) -> Alignment {
    let empty = Alignment {
        target: vec![None; hyp.len()],
    };
    let exact_h: Vec<Option<String>> = hyp.iter().map(|w| Some(w.clone())).collect();
    let exact_r: Vec<Option<String>> = reference.iter().map(|w| Some(w.clone())).collect();
    let exact = align_stage(&empty, &exact_h, &exact_r);
    if !opts.stem {
        return exact;
    }
    let stemmer = Stemmer::create(Algorithm::English);
    let stem = |w: &String| Some(stemmer.stem(w).into_owned());
    let stem_h: Vec<Option<String>> = hyp.iter().map(stem).collect();
    let stem_r: Vec<Option<String>> = reference.iter().map(stem).collect();
    align_stage(&exact, &stem_h, &stem_r)
}

/// Sentence score on the 0–1 scale.
pub fn meteor_pair(hyp: &[String], reference: &[String], opts: MeteorOptions) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let a = align(hyp, reference, opts);
    let m = a.matches();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
    let penalty = GAMMA * (a.chunks() as f64 / m as f64).powf(BETA);
    f_mean * (1.0 - penalty)
}

pub fn corpus_meteor(pairs: &[EvalPair], opts: MeteorOptions) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    100.0 * pairs.iter().map(|p| meteor_pair(&p.hypothesis, &p.reference, opts)).sum::<f64>() / pairs.len() as f64
}
