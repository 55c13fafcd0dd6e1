// SPDX-License-Identifier: Apache-2.0

//! AdamW with a one-cycle learning-rate schedule, gradient-norm clipping and
//! best-validation checkpointing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Mask, WindowPair};
use crate::error::{Error, Result};
use crate::forecast::predict_batch;
use crate::losses::total_loss_var;
use crate::metrics::mae;
use crate::model::{check_params, fcnet_forward_var, init_params, save_checkpoint, FcnetConfig, ModelParams};
use crate::tensor::{Tape, Tensor};

pub const LOG_HEADER: &str = "step,lr,total_loss,pred_loss,freq_loss,val_mae";
/// Prediction loss above this aborts training.
pub const DIVERGENCE_LOSS: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter tensor.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub hp: AdamW,
    step: u64,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl OptimState {
    pub fn new(params: &ModelParams, hp: AdamW) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(n, t)| (n.to_string(), vec![0.0f32; t.len()]))
                .collect::<BTreeMap<_, _>>()
        };
        OptimState {
            hp,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update. Parameters without a gradient only decay. A non-finite
/// gradient aborts before anything is modified.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor<f32>>,
    state: &mut OptimState,
    lr: f64,
) -> Result<()> {
    for (name, g) in grads {
        let p = params.get(name)?;
        if g.shape() != p.shape() {
            return Err(Error::dim(format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape())));
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("{name}: non-finite gradient at element {i}")));
        }
    }
    state.step += 1;
    let hp = state.hp;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let decay = (1.0 - lr * hp.weight_decay) as f32;
    for (name, p) in params.iter_mut() {
        let data = p.data_mut();
        data.iter_mut().for_each(|x| *x *= decay);
        let Some(g) = grads.get(name) else { continue };
        let m = state.m.get_mut(name).ok_or_else(|| Error::config(format!("{name}: no optimizer state")))?;
        let v = state.v.get_mut(name).ok_or_else(|| Error::config(format!("{name}: no optimizer state")))?;
        for i in 0..data.len() {
            let gi = g.data()[i] as f64;
            let mi = hp.beta1 * m[i] as f64 + (1.0 - hp.beta1) * gi;
            let vi = hp.beta2 * v[i] as f64 + (1.0 - hp.beta2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + hp.eps);
            data[i] = (data[i] as f64 - update) as f32;
        }
    }
    Ok(())
}

/// Cosine warm-up from `0.04·max_lr` to `max_lr`, then cosine decay to `min_lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub max_lr: f64,
    pub min_lr: f64,
}

pub const WARMUP_START: f64 = 0.04;

impl LrSchedule {
    pub fn warmup_end(&self) -> usize {
        (self.total_steps as f64 * self.warmup_fraction).round() as usize
    }

    pub fn lr(&self, step: usize) -> Result<f64> {
        one_cycle_lr(step, self)
    }
}

pub fn one_cycle_lr(step: usize, s: &LrSchedule) -> Result<f64> {
    if step > s.total_steps {
        return Err(Error::usage(format!("step {step} beyond schedule of {}", s.total_steps)));
    }
    let cos_mix = |from: f64, to: f64, frac: f64| to + (from - to) * (1.0 + (std::f64::consts::PI * frac).cos()) / 2.0;
    let warm = s.warmup_end();
    if step < warm {
        return Ok(cos_mix(WARMUP_START * s.max_lr, s.max_lr, step as f64 / warm as f64));
    }
    let rest = s.total_steps - warm;
    if rest == 0 {
        return Ok(s.min_lr);
    }
    Ok(cos_mix(s.max_lr, s.min_lr, (step - warm) as f64 / rest as f64))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Peak learning rate.
    pub lr: f64,
    pub min_lr: f64,
    pub warmup_fraction: f64,
    pub optimizer: AdamW,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub log_every: usize,
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 4,
            lr: 1e-3,
            min_lr: 4e-9,
            warmup_fraction: 0.3,
            optimizer: AdamW::default(),
            clip_norm: Some(1.0),
            seed: 0,
            log_every: 10,
            val_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            total_steps: self.steps,
            warmup_fraction: self.warmup_fraction,
            max_lr: self.lr,
            min_lr: self.min_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.log_every == 0 || self.val_every == 0 {
            return Err(Error::config("steps, batch, log_every and val_every must be positive"));
        }
        if !(self.lr > 0.0) || !(self.min_lr >= 0.0) || self.min_lr > self.lr {
            return Err(Error::config(format!("need 0 ≤ min_lr ≤ lr and lr > 0, got {} / {}", self.min_lr, self.lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("warmup_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub total_loss: f64,
    pub pred_loss: f64,
    pub freq_loss: f64,
    pub val_mae: Option<f64>,
}

impl LogRow {
    pub fn csv_line(&self) -> String {
        let val = self.val_mae.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.step, self.lr, self.total_loss, self.pred_loss, self.freq_loss, val
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.csv_line());
        }
        s
    }
}

/// Where a run persists its artifacts, if anywhere.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Rewritten whenever validation MAE improves.
    pub checkpoint: Option<PathBuf>,
    /// CSV log, flushed row by row.
    pub log: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: ModelParams,
    pub best_val_mae: f64,
    /// `None` when no update beat the initial parameters.
    pub best_step: Option<usize>,
    pub last: ModelParams,
    pub log: TrainLog,
}

/// Losses and gradients of one batch.
pub struct StepResult {
    pub total: f64,
    pub pred: f64,
    pub freq: f64,
    pub grads: BTreeMap<String, Tensor<f32>>,
}

fn stack_batch(pairs: &[&WindowPair]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let x = Tensor::stack(&pairs.iter().map(|p| p.x.data().clone()).collect::<Vec<_>>())?;
    let y = Tensor::stack(&pairs.iter().map(|p| p.y.data().clone()).collect::<Vec<_>>())?;
    Ok((x, y))
}

/// Forward and backward over one batch.
pub fn loss_and_grads(params: &ModelParams, cfg: &FcnetConfig, batch: &[&WindowPair], mask: &Mask) -> Result<StepResult> {
    let (x, y) = stack_batch(batch)?;
    let mut tape = Tape::<f32>::new();
    let bound = params.bind(&mut tape);
    let xv = tape.constant(x);
    let yv = tape.constant(y);
    let out = fcnet_forward_var(&mut tape, &bound, cfg, xv)?;
    let parts = total_loss_var(&mut tape, out.y, yv, out.freq_target(cfg), &mask.to_tensor(), cfg.effective_lambda())?;
    tape.backward(parts.total)?;
    let grads = bound
        .iter()
        .filter_map(|(n, v)| tape.grad(v).map(|g| (n.to_string(), g)))
        .collect();
    Ok(StepResult {
        total: tape.value(parts.total).item() as f64,
        pred: tape.value(parts.pred).item() as f64,
        freq: parts.freq.map_or(0.0, |f| tape.value(f).item() as f64),
        grads,
    })
}

/// Scale gradients so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Tensor<f32>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = (max_norm / norm) as f32;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Mean over windows of the clamped forecast's MAE. Parameters are only read.
pub fn validation_mae(params: &ModelParams, cfg: &FcnetConfig, pairs: &[WindowPair], batch: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::usage("validation needs at least one window"));
    }
    let mut acc = 0.0;
    for chunk in pairs.chunks(batch.max(1)) {
        let xs: Vec<_> = chunk.iter().map(|p| p.x.clone()).collect();
        for (pred, pair) in predict_batch(params, cfg, &xs)?.iter().zip(chunk) {
            acc += mae(pred.data(), pair.y.data(), pair.y.mask())?.mean;
        }
    }
    Ok(acc / pairs.len() as f64)
}

struct LogSink {
    rows: TrainLog,
    file: Option<BufWriter<File>>,
    path: Option<PathBuf>,
}

impl LogSink {
    fn open(path: Option<PathBuf>) -> Result<Self> {
        let file = match &path {
            Some(p) => {
                let mut f = BufWriter::new(File::create(p).map_err(|e| Error::io_at(p, e))?);
                writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io_at(p, e))?;
                Some(f)
            }
            None => None,
        };
        Ok(LogSink {
            rows: TrainLog::default(),
            file,
            path,
        })
    }

    fn push(&mut self, row: LogRow) -> Result<()> {
        if let (Some(f), Some(p)) = (&mut self.file, &self.path) {
            writeln!(f, "{}", row.csv_line())
                .and_then(|_| f.flush())
                .map_err(|e| Error::io_at(p, e))?;
        }
        self.rows.rows.push(row);
        Ok(())
    }
}

/// Endless reshuffled pass over `0..n`, fixed by the seed.
struct BatchOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    fn new(n: usize, seed: u64) -> Self {
        BatchOrder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Train from a fresh initialization seeded by `tc.seed`.
pub fn train(
    cfg: &FcnetConfig,
    tc: &TrainConfig,
    train_pairs: &[WindowPair],
    val_pairs: &[WindowPair],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = init_params(cfg, tc.seed)?;
    train_from(params, cfg, tc, train_pairs, val_pairs, opts)
}

/// Train starting from `params`. On divergence the error is returned and the
/// checkpoint file, if any, still holds the best parameters seen so far.
pub fn train_from(
    mut params: ModelParams,
    cfg: &FcnetConfig,
    tc: &TrainConfig,
    train_pairs: &[WindowPair],
    val_pairs: &[WindowPair],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    tc.validate()?;
    check_params(&params, cfg)?;
    let mask = train_pairs
        .first()
        .ok_or_else(|| Error::usage("training needs at least one window"))?
        .y
        .mask()
        .clone();
    if train_pairs.iter().chain(val_pairs).any(|p| *p.y.mask() != mask) {
        return Err(Error::usage("all windows must share one land mask"));
    }
    let schedule = tc.schedule();
    let mut state = OptimState::new(&params, tc.optimizer);
    let mut order = BatchOrder::new(train_pairs.len(), tc.seed);
    let mut log = LogSink::open(opts.log.clone())?;

    let mut best_val_mae = validation_mae(&params, cfg, val_pairs, tc.batch)?;
    let mut best = params.clone();
    let mut best_step = None;
    if let Some(path) = &opts.checkpoint {
        save_checkpoint(&best, path)?;
    }

    for step in 0..tc.steps {
        let lr = schedule.lr(step)?;
        let batch: Vec<&WindowPair> = order.next_batch(tc.batch).into_iter().map(|i| &train_pairs[i]).collect();
        let diverged = |why: String| Error::numeric(format!("training diverged at step {step}: {why}"));
        let mut res = match loss_and_grads(&params, cfg, &batch, &mask) {
            Ok(r) => r,
            Err(Error::Numeric(m)) => return Err(diverged(m)),
            Err(e) => return Err(e),
        };
        if !res.total.is_finite() || res.pred > DIVERGENCE_LOSS {
            return Err(diverged(format!("prediction loss {}", res.pred)));
        }
        if let Some(c) = tc.clip_norm {
            clip_grad_norm(&mut res.grads, c);
        }
        adamw_step(&mut params, &res.grads, &mut state, lr).map_err(|e| match e {
            Error::Numeric(m) => diverged(m),
            e => e,
        })?;

        let last = step + 1 == tc.steps;
        let val_mae = if (step + 1) % tc.val_every == 0 || last {
            let v = validation_mae(&params, cfg, val_pairs, tc.batch)?;
            if v < best_val_mae {
                best_val_mae = v;
                best = params.clone();
                best_step = Some(step);
                if let Some(path) = &opts.checkpoint {
                    save_checkpoint(&best, path)?;
                }
            }
            Some(v)
        } else {
            None
        };
        if step % tc.log_every == 0 || val_mae.is_some() {
            log.push(LogRow {
                step,
                lr,
                total_loss: res.total,
                pred_loss: res.pred,
                freq_loss: res.freq,
                val_mae,
            })?;
        }
    }
    Ok(TrainOutcome {
        best,
        best_val_mae,
        best_step,
        last: params,
        log: log.rows,
    })
}
