//! Forward rules for every recorded operation, plus the raw matrix kernels
//! shared with the backward sweep.

use super::tape::{Op, Tape, Var};
use crate::error::{Error, Result};

/// `out[m×n] += a[m×k] · b[k×n]`
pub(super) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
pub(super) fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            out[i * n + j] += s;
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
pub(super) fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

impl<'a> Tape<'a> {
    fn require_matrix(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::shape(op, s, &[]));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_matrix("matmul", a)?;
        let (k2, n) = self.require_matrix("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, vec![m, n], Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.require_matrix("matmul_nt", a)?;
        let (n, k2) = self.require_matrix("matmul_nt", b)?;
        if k != k2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_into(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, vec![m, n], Op::MatMulNT(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.needs(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Add(a, b), rg))
    }

    /// Adds the vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let n = self.cols(a);
        if self.value(b).len() != n {
            return Err(Error::shape("add_row", self.shape(a), self.shape(b)));
        }
        let bv = self.value(b);
        let out = self
            .value(a)
            .chunks(n)
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        let rg = self.needs(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::AddRow(a, b), rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("hadamard", self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.needs(&[a, b]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::Hadamard(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let rg = self.needs(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x + c).collect();
        let rg = self.needs(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::AddScalar(a), rg)
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.value(a).len() {
            return Err(Error::shape("mul_const", self.shape(a), &[c.len()]));
        }
        let out = self.value(a).iter().zip(&c).map(|(x, y)| x * y).collect();
        let rg = self.needs(&[a]);
        let shape = self.shape(a).to_vec();
        Ok(self.push(out, shape, Op::MulConst(a, c), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let rg = self.needs(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let rg = self.needs(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(out, shape, Op::Relu(a), rg)
    }

    /// Softmax along the last axis. `mask[i] == true` excludes an entry; the
    /// mask is either one row (broadcast to every row) or full-size.
    /// Excluded entries get weight exactly 0.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let n = self.cols(x);
        let total = self.value(x).len();
        let full = match mask.len() {
            0 => false,
            l if l == total => true,
            l if l == n => false,
            _ => return Err(Error::shape("masked_softmax", self.shape(x), &[mask.len()])),
        };
        let masked = |r: usize, j: usize| -> bool {
            match mask.len() {
                0 => false,
                _ if full => mask[r * n + j],
                _ => mask[j],
            }
        };
        let xv = self.value(x);
        let mut out = vec![0.0; total];
        for (r, row) in xv.chunks(n).enumerate() {
            // NaN inputs propagate into the output rather than tripping
            // the contract check
            let mut max = f64::NEG_INFINITY;
            let mut any = false;
            for (j, &v) in row.iter().enumerate() {
                if !masked(r, j) {
                    any = true;
                    max = max.max(v);
                }
            }
            if !any {
                return Err(Error::Contract(format!(
                    "masked_softmax: row {r} has no unmasked entries"
                )));
            }
            let orow = &mut out[r * n..(r + 1) * n];
            let mut z = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if !masked(r, j) {
                    let e = (v - max).exp();
                    orow[j] = e;
                    z += e;
                }
            }
            orow.iter_mut().for_each(|v| *v /= z);
        }
        let rg = self.needs(&[x]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(out, shape, Op::MaskedSoftmax(x), rg))
    }

    /// Row-wise layer normalization with biased variance and `eps` inside
    /// the square root.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let n = self.cols(x);
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::shape("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xv = self.value(x);
        let rows = xv.len() / n.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        for (r, row) in xv.chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..n {
                xhat[r * n + j] = (row[j] - mean) * inv;
            }
        }
        let (gv, bv) = (self.value(gain), self.value(bias));
        let out = xhat
            .chunks(n)
            .flat_map(|row| (0..n).map(move |j| row[j] * gv[j] + bv[j]))
            .collect();
        let rg = self.needs(&[x, gain, bias]);
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            out,
            shape,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Joins 2-D parts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_cols of zero parts".into()));
        };
        let rows = self.rows(first);
        for &p in parts {
            if self.rows(p) != rows || self.shape(p).len() != 2 {
                return Err(Error::shape("concat_cols", self.shape(first), self.shape(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.cols(p)).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let w = self.cols(p);
                out.extend_from_slice(&self.value(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = self.needs(parts);
        Ok(self.push(out, vec![rows, total], Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stacks 2-D parts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat_rows of zero parts".into()));
        };
        let cols = self.cols(first);
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            if self.cols(p) != cols || self.shape(p).len() != 2 {
                return Err(Error::shape("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += self.rows(p);
            out.extend_from_slice(self.value(p));
        }
        let rg = self.needs(parts);
        Ok(self.push(out, vec![rows, cols], Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.require_matrix("slice_cols", x)?;
        if start + len > cols {
            return Err(Error::Index {
                what: "slice_cols end",
                index: start + len,
                bound: cols,
            });
        }
        let xv = self.value(x);
        let out = (0..rows)
            .flat_map(|r| xv[r * cols + start..r * cols + start + len].iter().copied())
            .collect();
        let rg = self.needs(&[x]);
        Ok(self.push(out, vec![rows, len], Op::SliceCols { x, start }, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.require_matrix("slice_rows", x)?;
        if start + len > rows {
            return Err(Error::Index {
                what: "slice_rows end",
                index: start + len,
                bound: rows,
            });
        }
        let out = self.value(x)[start * cols..(start + len) * cols].to_vec();
        let rg = self.needs(&[x]);
        Ok(self.push(out, vec![len, cols], Op::SliceRows { x, start }, rg))
    }

    /// Gathers rows of `table` by id. Gradients scatter-add back, so repeated
    /// ids accumulate.
    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.require_matrix("embedding_lookup", table)?;
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::Index {
                    what: "embedding row",
                    index: id,
                    bound: v,
                });
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let rg = self.needs(&[table]);
        Ok(self.push(
            out,
            vec![ids.len(), d],
            Op::Lookup {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.needs(&[x]);
        self.push(vec![s], vec![], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.needs(&[x]);
        self.push(vec![s], vec![], Op::Mean(x), rg)
    }

    /// `Σ_r -log softmax(logits_r)[target_r]` over rows with a target.
    pub fn nll_sum(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (rows, v) = self.require_matrix("nll_sum", logits)?;
        if targets.len() != rows {
            return Err(Error::shape("nll_sum", self.shape(logits), &[targets.len()]));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; lv.len()];
        let mut total = 0.0;
        for (r, row) in lv.chunks(v).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
            for j in 0..v {
                probs[r * v + j] = (row[j] - max).exp() / z;
            }
            if let Some(t) = targets[r] {
                if t >= v {
                    return Err(Error::Index {
                        what: "target id",
                        index: t,
                        bound: v,
                    });
                }
                total += z.ln() + max - row[t];
            }
        }
        let rg = self.needs(&[logits]);
        Ok(self.push(
            vec![total],
            vec![],
            Op::NllSum {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }
}
