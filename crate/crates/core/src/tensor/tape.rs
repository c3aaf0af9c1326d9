use std::borrow::Cow;

use super::ops::{matmul_into, matmul_nt_into, matmul_tn_into};
use super::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(super) enum Op {
    Leaf { tag: Option<usize> },
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Vec<f64>),
    Sigmoid(Var),
    Relu(Var),
    MaskedSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    Lookup { table: Var, ids: Vec<usize> },
    Sum(Var),
    Mean(Var),
    NllSum {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
}

pub(super) struct Node<'a> {
    pub(super) value: Cow<'a, [f64]>,
    pub(super) shape: Vec<usize>,
    pub(super) op: Op,
    pub(super) requires_grad: bool,
}

/// Define-by-run recording of tensor operations.
///
/// Nodes are appended in creation order, so the node list is already a
/// topological order and `backward` is a single reverse sweep.
#[derive(Default)]
pub struct Tape<'a> {
    pub(super) nodes: Vec<Node<'a>>,
}

/// Gradients produced by one backward sweep, owned independently of the tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
    tagged: Vec<(usize, Var)>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.by_node.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(tag, gradient)` for every tagged leaf that received a gradient.
    pub fn tagged(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.tagged
            .iter()
            .filter_map(|&(tag, v)| self.wrt(v).map(|g| (tag, g)))
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node recorded after the first `len`; vars at or past
    /// `len` become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub(super) fn push(
        &mut self,
        value: Vec<f64>,
        shape: Vec<usize>,
        op: Op,
        requires_grad: bool,
    ) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            value: Cow::Owned(value),
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a borrowed tensor as a leaf. Gradients flow to it when the
    /// tensor has `requires_grad` set.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        self.leaf_tagged(t, None)
    }

    /// Like [`Tape::leaf`], with a caller-chosen tag reported back by
    /// [`Gradients::tagged`].
    pub fn leaf_tagged(&mut self, t: &'a Tensor, tag: Option<usize>) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t.data()),
            shape: t.shape().to_vec(),
            op: Op::Leaf { tag },
            requires_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an owned value that never receives gradients.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(Error::shape("constant", &shape, &[data.len()]));
        }
        Ok(self.push(data, shape, Op::Leaf { tag: None }, false))
    }

    /// Records an owned leaf that does receive gradients.
    pub fn variable(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(Error::shape("variable", &shape, &[data.len()]));
        }
        Ok(self.push(data, shape, Op::Leaf { tag: None }, true))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn rows(&self, v: Var) -> usize {
        let s = self.shape(v);
        if s.len() >= 2 {
            s[0]
        } else {
            1
        }
    }

    pub fn cols(&self, v: Var) -> usize {
        self.shape(v).last().copied().unwrap_or(1)
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("tape node shape")
    }

    pub(super) fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let n = self.nodes.len();
        if numel(self.shape(loss)) != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let tagged = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, node)| match node.op {
                Op::Leaf { tag: Some(tag) } if node.requires_grad => Some((tag, Var(i))),
                _ => None,
            })
            .collect();
        // Only leaves need to keep their gradients.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf { .. }) || !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients {
            by_node: grads,
            tagged,
        })
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &node.value[..];
        match &node.op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims2(*a);
                let n = self.cols(*b);
                if self.req(*a) {
                    let ga = acc(grads, *a, m * k);
                    matmul_nt_into(g, self.value(*b), ga, m, n, k);
                }
                if self.req(*b) {
                    let gb = acc(grads, *b, k * n);
                    matmul_tn_into(self.value(*a), g, gb, m, k, n);
                }
            }
            Op::MatMulNT(a, b) => {
                // y[m×n] = a[m×k] · b[n×k]ᵀ
                let (m, k) = self.dims2(*a);
                let n = self.rows(*b);
                if self.req(*a) {
                    let ga = acc(grads, *a, m * k);
                    matmul_into(g, self.value(*b), ga, m, n, k);
                }
                if self.req(*b) {
                    let gb = acc(grads, *b, n * k);
                    matmul_tn_into(g, self.value(*a), gb, m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.req(v) {
                        add_into(acc(grads, v, g.len()), g);
                    }
                }
            }
            Op::AddRow(a, b) => {
                if self.req(*a) {
                    add_into(acc(grads, *a, g.len()), g);
                }
                if self.req(*b) {
                    let n = self.cols(*a);
                    let gb = acc(grads, *b, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.req(*a) {
                    let ga = acc(grads, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                }
                if self.req(*b) {
                    let gb = acc(grads, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(a, s) => {
                let ga = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * s;
                }
            }
            Op::AddScalar(a) => add_into(acc(grads, *a, g.len()), g),
            Op::MulConst(a, c) => {
                let ga = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * c[i];
                }
            }
            Op::Sigmoid(a) => {
                let ga = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
            Op::Relu(a) => {
                let ga = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    if y[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            }
            Op::MaskedSoftmax(a) => {
                let n = node.shape.last().copied().unwrap_or(1);
                let ga = acc(grads, *a, g.len());
                for (r, (yr, gr)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..n {
                        ga[r * n + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = self.cols(*x);
                let gamma = self.value(*gain);
                if self.req(*gain) {
                    let gg = acc(grads, *gain, n);
                    for (gr, xr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                }
                if self.req(*bias) {
                    let gb = acc(grads, *bias, n);
                    for gr in g.chunks(n) {
                        add_into(gb, gr);
                    }
                }
                if self.req(*x) {
                    let gx = acc(grads, *x, g.len());
                    let nf = n as f64;
                    for (r, (gr, xr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let dxhat: Vec<f64> = (0..n).map(|j| gr[j] * gamma[j]).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = dxhat.iter().zip(xr).map(|(d, h)| d * h).sum();
                        for j in 0..n {
                            gx[r * n + j] +=
                                inv_std[r] / nf * (nf * dxhat[j] - sum_d - xr[j] * sum_dx);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.shape.last().copied().unwrap_or(1);
                let rows = g.len() / total.max(1);
                let mut offset = 0;
                for &p in parts {
                    let w = self.cols(p);
                    if self.req(p) {
                        let gp = acc(grads, p, rows * w);
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * w..(r + 1) * w],
                                &g[r * total + offset..r * total + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.req(p) {
                        add_into(acc(grads, p, len), &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            Op::SliceCols { x, start } => {
                let w = node.shape.last().copied().unwrap_or(1);
                let (rows, total) = self.dims2(*x);
                let gx = acc(grads, *x, rows * total);
                for r in 0..rows {
                    add_into(
                        &mut gx[r * total + start..r * total + start + w],
                        &g[r * w..(r + 1) * w],
                    );
                }
            }
            Op::SliceRows { x, start } => {
                let cols = self.cols(*x);
                let len = self.value(*x).len();
                let gx = acc(grads, *x, len);
                add_into(&mut gx[start * cols..start * cols + g.len()], g);
            }
            Op::Lookup { table, ids } => {
                let d = self.cols(*table);
                let len = self.value(*table).len();
                let gt = acc(grads, *table, len);
                for (row, &id) in ids.iter().enumerate() {
                    add_into(&mut gt[id * d..(id + 1) * d], &g[row * d..(row + 1) * d]);
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                let ga = acc(grads, *a, len);
                ga.iter_mut().for_each(|v| *v += g[0]);
            }
            Op::Mean(a) => {
                let len = self.value(*a).len();
                let ga = acc(grads, *a, len);
                let s = g[0] / len as f64;
                ga.iter_mut().for_each(|v| *v += s);
            }
            Op::NllSum {
                logits,
                targets,
                probs,
            } => {
                let v = self.cols(*logits);
                let len = probs.len();
                let gl = acc(grads, *logits, len);
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = t {
                        for j in 0..v {
                            gl[r * v + j] += g[0] * probs[r * v + j];
                        }
                        gl[r * v + t] -= g[0];
                    }
                }
            }
        }
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(super) fn dims2(&self, v: Var) -> (usize, usize) {
        (self.rows(v), self.cols(v))
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
