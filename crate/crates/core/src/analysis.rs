//! Weight-visualization exports: utterance-to-utterance attention
//! aggregated from inter-attention weights, and the share of global
//! information passed by each gate.
//!
//! Attention from utterance `t` to utterance `s` in one example is
//! `a[t][s] = (1/|u_t|) Σ_i Σ_j α(i, j)` over the real tokens `i` of `u_t`
//! and `j` of `u_s`, with `α` first averaged over heads. The gate
//! proportion for utterance `t` is `1 − mean(H)` over its real tokens and
//! all hidden dimensions: `H` weights the layer input (local) term, so
//! `1 − H` is the global share. Examples are grouped by context size `N`
//! and averaged per (layer, N).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::ExampleInput;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::global_encoder::EncoderTrace;
use crate::model::{Model, Variant};

/// Dataset-averaged `N × N` attention matrix of one global layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionMap {
    pub layer: usize,
    pub n: usize,
    pub examples: usize,
    /// Row-major `a[t][s]`.
    pub cells: Vec<f64>,
}

impl AttentionMap {
    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.cells[t * self.n + s]
    }

    pub fn row_sum(&self, t: usize) -> f64 {
        self.cells[t * self.n..(t + 1) * self.n].iter().sum()
    }
}

/// Dataset-averaged gate statistics for context size `n`, one row per
/// global layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GateMap {
    pub n: usize,
    pub examples: usize,
    /// `global_share[layer][t] = 1 − mean(H)`.
    pub global_share: Vec<Vec<f64>>,
    /// `mean_h[layer][t] = mean(H)`, the local share.
    pub mean_h: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct HeatmapReport {
    pub split: String,
    pub attention: Vec<AttentionMap>,
    pub gates: Vec<GateMap>,
}

/// Per-example aggregation of one trace: `[layer][t][s]` attention and
/// `[layer][t]` mean gate value (absent without gates).
struct ExampleMaps {
    n: usize,
    attention: Vec<Vec<f64>>,
    mean_h: Option<Vec<Vec<f64>>>,
}

fn aggregate_trace(trace: &EncoderTrace) -> ExampleMaps {
    let segs = &trace.segments;
    let n = segs.spans.len();
    let mut attention = Vec::with_capacity(trace.layers.len());
    let mut mean_h = Vec::with_capacity(trace.layers.len());
    let mut has_gate = true;
    for layer in &trace.layers {
        let mut a = vec![0.0; n * n];
        for (t, qs) in segs.spans.iter().enumerate() {
            let real: Vec<usize> = qs.clone().filter(|&i| !segs.pad[i]).collect();
            for (s, ks) in segs.spans.iter().enumerate() {
                let mut total = 0.0;
                for &i in &real {
                    for j in ks.clone().filter(|&j| !segs.pad[j]) {
                        let avg: f64 = (0..layer.heads).map(|h| layer.weight(h, i, j)).sum::<f64>() / layer.heads as f64;
                        total += avg;
                    }
                }
                a[t * n + s] = if real.is_empty() { 0.0 } else { total / real.len() as f64 };
            }
        }
        attention.push(a);
        match &layer.gate {
            Some(h) => {
                let row: Vec<f64> = segs
                    .spans
                    .iter()
                    .map(|span| {
                        let rows: Vec<usize> = span.clone().filter(|&i| !segs.pad[i]).collect();
                        let sum: f64 = rows.iter().flat_map(|&i| &h[i * layer.d..(i + 1) * layer.d]).sum();
                        let count = rows.len() * layer.d;
                        if count == 0 {
                            0.0
                        } else {
                            sum / count as f64
                        }
                    })
                    .collect();
                mean_h.push(row);
            }
            None => has_gate = false,
        }
    }
    ExampleMaps {
        n,
        attention,
        mean_h: has_gate.then_some(mean_h),
    }
}

fn traces(model: &Model, data: &[ExampleInput], exec: Execution) -> Result<Vec<ExampleMaps>> {
    if data.is_empty() {
        return Err(Error::Empty("weight visualization needs at least one example".into()));
    }
    if model.config.variant == Variant::FlatTransformer {
        return Err(Error::Config(
            "the flat encoder has no utterance-level attention or gates to visualize".into(),
        ));
    }
    exec.map(data, |ex| model.encoder_trace(ex).map(|t| aggregate_trace(&t)))
        .into_iter()
        .collect()
}

fn group_by_n(maps: &[ExampleMaps]) -> BTreeMap<usize, Vec<&ExampleMaps>> {
    let mut groups: BTreeMap<usize, Vec<&ExampleMaps>> = BTreeMap::new();
    for m in maps {
        groups.entry(m.n).or_default().push(m);
    }
    groups
}

fn attention_maps(maps: &[ExampleMaps]) -> Vec<AttentionMap> {
    let mut out = Vec::new();
    for (n, group) in group_by_n(maps) {
        let layers = group[0].attention.len();
        for layer in 0..layers {
            let mut cells = vec![0.0; n * n];
            for m in &group {
                cells.iter_mut().zip(&m.attention[layer]).for_each(|(c, v)| *c += v);
            }
            cells.iter_mut().for_each(|c| *c /= group.len() as f64);
            out.push(AttentionMap {
                layer,
                n,
                examples: group.len(),
                cells,
            });
        }
    }
    out
}

fn gate_maps(maps: &[ExampleMaps]) -> Vec<GateMap> {
    let mut out = Vec::new();
    for (n, group) in group_by_n(maps) {
        let Some(first) = &group[0].mean_h else { continue };
        let mut mean_h = vec![vec![0.0; n]; first.len()];
        for m in &group {
            let h = m.mean_h.as_ref().expect("all examples share the variant");
            for (acc, row) in mean_h.iter_mut().zip(h) {
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
            }
        }
        mean_h.iter_mut().flatten().for_each(|v| *v /= group.len() as f64);
        let global_share = mean_h.iter().map(|row| row.iter().map(|h| 1.0 - h).collect()).collect();
        out.push(GateMap {
            n,
            examples: group.len(),
            global_share,
            mean_h,
        });
    }
    out
}

pub fn attention_heatmap(model: &Model, data: &[ExampleInput], split: &str, exec: Execution) -> Result<HeatmapReport> {
    let maps = traces(model, data, exec)?;
    Ok(HeatmapReport {
        split: split.to_string(),
        attention: attention_maps(&maps),
        gates: Vec::new(),
    })
}

/// Errors for variants without gates.
pub fn gate_heatmap(model: &Model, data: &[ExampleInput], split: &str, exec: Execution) -> Result<HeatmapReport> {
    if model.config.variant == Variant::NoGate {
        return Err(Error::Config("the NO_GATE variant has no gates to visualize".into()));
    }
    let maps = traces(model, data, exec)?;
    Ok(HeatmapReport {
        split: split.to_string(),
        attention: Vec::new(),
        gates: gate_maps(&maps),
    })
}

/// Both heatmaps from a single pass over the data; gate maps are empty
/// for variants without gates.
pub fn heatmaps(model: &Model, data: &[ExampleInput], split: &str, exec: Execution) -> Result<HeatmapReport> {
    let maps = traces(model, data, exec)?;
    Ok(HeatmapReport {
        split: split.to_string(),
        attention: attention_maps(&maps),
        gates: gate_maps(&maps),
    })
}

const SHADES: &[u8] = b" .:-=+*#%@";

fn shade(v: f64) -> char {
    let i = (v.clamp(0.0, 1.0) * (SHADES.len() - 1) as f64).round() as usize;
    SHADES[i] as char
}

impl HeatmapReport {
    /// Writes one CSV per (layer, N) for attention and, per N, one CSV
    /// each for the gate global share and the raw mean gate value.
    /// Returns the written paths in order.
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for m in &self.attention {
            let mut s = format!(
                "# split={} layer={} n={} examples={} (rows: attending utterance t; columns: attended utterance s)\n",
                self.split,
                m.layer + 1,
                m.n,
                m.examples
            );
            s.push('t');
            (1..=m.n).for_each(|j| {
                let _ = write!(s, ",s{j}");
            });
            s.push('\n');
            for t in 0..m.n {
                let _ = write!(s, "t{}", t + 1);
                for j in 0..m.n {
                    let _ = write!(s, ",{}", m.get(t, j));
                }
                s.push('\n');
            }
            let path = dir.join(format!("attention_layer{}_n{}.csv", m.layer + 1, m.n));
            fs::write(&path, s)?;
            written.push(path);
        }
        for g in &self.gates {
            for (kind, table, label) in [
                ("gate_global", &g.global_share, "global share = 1 - mean(H)"),
                ("gate_mean_h", &g.mean_h, "raw mean(H), the local share"),
            ] {
                let mut s = format!("# split={} n={} examples={} values: {label}\n", self.split, g.n, g.examples);
                s.push_str("layer");
                (1..=g.n).for_each(|t| {
                    let _ = write!(s, ",t{t}");
                });
                s.push('\n');
                for (l, row) in table.iter().enumerate() {
                    let _ = write!(s, "{}", l + 1);
                    for v in row {
                        let _ = write!(s, ",{v}");
                    }
                    s.push('\n');
                }
                let path = dir.join(format!("{kind}_n{}.csv", g.n));
                fs::write(&path, s)?;
                written.push(path);
            }
        }
        Ok(written)
    }

    /// Plain-text heatmaps for a quick look in a terminal.
    pub fn to_ascii(&self) -> String {
        let mut s = String::new();
        for m in &self.attention {
            let _ = writeln!(
                s,
                "attention layer {} (N = {}, {} examples), shades '{}' from 0 to 1",
                m.layer + 1,
                m.n,
                m.examples,
                String::from_utf8_lossy(SHADES)
            );
            for t in 0..m.n {
                let row: String = (0..m.n).map(|j| shade(m.get(t, j))).flat_map(|c| [c, c]).collect();
                let _ = writeln!(s, "  u{:<2} |{row}|", t + 1);
            }
        }
        for g in &self.gates {
            let _ = writeln!(s, "gate global share (N = {}, {} examples)", g.n, g.examples);
            for (l, row) in g.global_share.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
                let _ = writeln!(s, "  layer {} | {}", l + 1, cells.join(" "));
            }
        }
        s
    }
}
