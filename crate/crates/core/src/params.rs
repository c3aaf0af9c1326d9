//! Named parameter storage and the per-pass recording context.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered, named collection of learnable tensors. Insertion order is the
/// canonical order for checkpoints and optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        self.find(name)
            .map(|id| self.get(id))
            .ok_or_else(|| Error::Config(format!("no parameter named {name}")))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.find(name) {
            Some(id) => Ok(self.get_mut(id)),
            None => Err(Error::Config(format!("no parameter named {name}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.tensors.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Zero-filled buffers shaped like every parameter.
    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.tensors.iter().map(|t| vec![0.0; t.numel()]).collect()
    }
}

/// Deterministic initializer: every draw comes from one seeded stream, in
/// parameter-creation order.
pub struct Init {
    rng: ChaCha8Rng,
    std: f64,
}

impl Init {
    pub fn new(seed: u64, std: f64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std,
        }
    }

    pub fn normal(&mut self, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, self.std).expect("finite std");
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::new(shape, data).expect("shape matches data")
    }

    pub fn zeros(&self, shape: Vec<usize>) -> Tensor {
        Tensor::zeros(shape)
    }

    pub fn ones(&self, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, vec![1.0; n]).expect("shape matches data")
    }
}

/// Dropout settings for one training pass.
struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

/// Recording context for one forward pass over one example: the tape,
/// lazily bound parameters, and optional dropout.
pub struct Graph<'a> {
    pub tape: Tape<'a>,
    params: &'a ParamStore,
    bound: Vec<Option<Var>>,
    dropout: Option<Dropout>,
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Graph {
            tape: Tape::new(),
            params,
            bound: vec![None; params.len()],
            dropout: None,
        }
    }

    /// Enables dropout at `rate` with a dedicated seeded stream.
    pub fn with_dropout(mut self, rate: f64, seed: u64) -> Self {
        if rate > 0.0 {
            self.dropout = Some(Dropout {
                rate,
                rng: ChaCha8Rng::seed_from_u64(seed),
            });
        }
        self
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.tape.leaf_tagged(self.params.get(id), Some(id.0));
        self.bound[id.0] = Some(v);
        v
    }

    /// Current tape length, for a later [`Graph::rewind`].
    pub fn mark(&self) -> usize {
        self.tape.len()
    }

    /// Discards everything recorded since `mark`, including parameter
    /// bindings made after it.
    pub fn rewind(&mut self, mark: usize) {
        self.tape.truncate(mark);
        for b in &mut self.bound {
            if b.is_some_and(|v| v.0 >= mark) {
                *b = None;
            }
        }
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let Some(d) = self.dropout.as_mut() else {
            return Ok(x);
        };
        use rand::Rng;
        let keep = 1.0 - d.rate;
        let n = self.tape.value(x).len();
        let mask = (0..n)
            .map(|_| {
                if d.rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        self.tape.mul_const(x, mask)
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.tape.backward(loss)
    }
}

/// Adds every tagged gradient into `acc`, indexed by parameter id.
pub fn accumulate(acc: &mut [Vec<f64>], grads: &Gradients) {
    for (tag, g) in grads.tagged() {
        acc[tag].iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
}
