//! AdamW training with gradient clipping, validation-perplexity model
//! selection and an append-only metric log.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ExampleInput;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::checkpoint::Checkpoint;
use crate::model::Model;
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Validation (and log) interval in steps.
    pub eval_interval: usize,
    /// Global gradient-norm limit; 0 disables clipping.
    pub clip_norm: f64,
    /// Linear warmup length; 0 keeps the learning rate constant.
    pub warmup_steps: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            batch_size: 16,
            max_steps: 1000,
            eval_interval: 100,
            clip_norm: 1.0,
            warmup_steps: 0,
            seed: 0,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train.{m}")));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 || self.clip_norm < 0.0 {
            return bad("eps must be positive; weight_decay and clip_norm non-negative");
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return bad("batch_size and eval_interval must be positive");
        }
        Ok(())
    }

    /// Learning rate at 1-based `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps as u64 {
            self.lr
        } else {
            self.lr * step as f64 / self.warmup_steps as f64
        }
    }
}

/// AdamW moments, shaped like the parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        OptimizerState {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One AdamW update with bias-corrected moments and decoupled weight
/// decay (`p ← p − lr·λ·p` before the adaptive step).
pub fn adamw_step(params: &mut ParamStore, grads: &[Vec<f64>], state: &mut OptimizerState, cfg: &TrainConfig, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.tensors_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *w -= lr * cfg.weight_decay * *w;
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

pub fn grad_norm(grads: &[Vec<f64>]) -> f64 {
    grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` to norm `max_norm` when larger; returns the norm before
/// clipping.
pub fn clip_grad_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

/// `exp(Σ NLL / Σ tokens)` over the unpadded response tokens of `data`.
pub fn evaluate_ppl(model: &Model, data: &[ExampleInput], exec: Execution) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("cannot evaluate perplexity on an empty dataset".into()));
    }
    let (nll, tokens) = model.nll_stats(data, exec)?;
    if tokens == 0 {
        return Err(Error::Empty("dataset has no response tokens".into()));
    }
    let ppl = (nll / tokens as f64).exp();
    if !ppl.is_finite() {
        return Err(Error::Numeric(format!("perplexity is {ppl}")));
    }
    Ok(ppl)
}

/// Example order for `epoch`, reproducible from `(seed, epoch)` alone.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    /// Mean training loss over the steps since the previous row.
    pub train_loss: f64,
    pub valid_ppl: f64,
}

pub const LOG_HEADER: &str = "step,train_loss,valid_ppl";

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!("{},{},{}", self.step, self.train_loss, self.valid_ppl)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation perplexity.
    pub best: Checkpoint,
    pub log: Vec<LogRow>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub steps: u64,
}

/// Trains `model` in place for `cfg.max_steps` steps. Validation
/// perplexity is computed every `eval_interval` steps and after the final
/// step; the best-scoring parameters are returned as a checkpoint. Each log
/// row is appended to `log_path` as it is produced.
pub fn train(
    model: &mut Model,
    train_set: &[ExampleInput],
    valid_set: &[ExampleInput],
    cfg: &TrainConfig,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    if valid_set.is_empty() {
        return Err(Error::Empty("validation set is empty".into()));
    }
    let mut log_file = match log_path {
        Some(p) => {
            let fresh = !p.exists() || std::fs::metadata(p)?.len() == 0;
            let mut f = OpenOptions::new().create(true).append(true).open(p)?;
            if fresh {
                writeln!(f, "{LOG_HEADER}")?;
            }
            Some(f)
        }
        None => None,
    };

    let mut state = OptimizerState::new(&model.params);
    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::new();
    let mut interval = (0.0, 0usize);
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;
    let mut epoch = 0u64;
    let mut order = epoch_order(train_set.len(), cfg.seed, epoch);
    let mut cursor = 0;

    for step in 1..=cfg.max_steps as u64 {
        if cursor >= order.len() {
            epoch += 1;
            order = epoch_order(train_set.len(), cfg.seed, epoch);
            cursor = 0;
        }
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch: Vec<ExampleInput> = order[cursor..end].iter().map(|&i| train_set[i].clone()).collect();
        cursor = end;

        let mut lg = model.loss_and_grads(&batch, cfg.execution, Some(cfg.seed.wrapping_add(step)))?;
        let loss = lg.mean_loss();
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss became {loss} at step {step}")));
        }
        let norm = clip_grad_norm(&mut lg.grads, cfg.clip_norm);
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("gradient norm became {norm} at step {step}")));
        }
        if step == 1 {
            initial_loss = loss;
        }
        final_loss = loss;
        interval.0 += loss;
        interval.1 += 1;
        adamw_step(&mut model.params, &lg.grads, &mut state, cfg, cfg.lr_at(step));

        if step % cfg.eval_interval as u64 == 0 || step == cfg.max_steps as u64 {
            let valid_ppl = evaluate_ppl(model, valid_set, cfg.execution)?;
            let row = LogRow {
                step,
                train_loss: interval.0 / interval.1 as f64,
                valid_ppl,
            };
            log::info!("step {step}: train loss {:.4}, valid ppl {valid_ppl:.4}", row.train_loss);
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{}", row.to_csv())?;
                f.flush()?;
            }
            log.push(row);
            interval = (0.0, 0);
            if best.as_ref().is_none_or(|b| valid_ppl < b.valid_ppl.unwrap_or(f64::INFINITY)) {
                best = Some(Checkpoint {
                    model: model.clone(),
                    step,
                    valid_ppl: Some(valid_ppl),
                    vocab: None,
                    optimizer: Some(state.clone()),
                });
            }
        }
    }
    let best = match best {
        Some(b) => b,
        // max_steps == 0: the untrained model is the only candidate
        None => Checkpoint {
            valid_ppl: Some(evaluate_ppl(model, valid_set, cfg.execution)?),
            ..Checkpoint::new(model.clone())
        },
    };
    Ok(TrainOutcome {
        best,
        log,
        initial_loss,
        final_loss,
        steps: cfg.max_steps as u64,
    })
}
