//! Runtime and memory measurements: base runtime, the per-step cost factors
//! `R_f` and `R_b`, time-to-loss `T_f`/`T_b`, and depth scaling.
//!
//! Timings are medians over repeated iterations after a warm-up. All
//! workloads are deterministic given the seed; only wall-clock values vary
//! between runs.

use std::time::Instant;

use serde::Serialize;

use crate::alloc;
use crate::data::{Batch, BatchIterator, Dataset};
use crate::error::{Error, Result};
use crate::fwdad;
use crate::nn::{self, ModelLoss, ModelSpec};
use crate::optim::{self, Method, OptState};
use crate::params::ParamSet;
use crate::program::evaluate;
use crate::revad;
use crate::rng::RngState;

/// Stream ids for [`RngState::derive`], so both methods see the same
/// initialization and batch order under one seed.
pub const INIT_STREAM: u64 = 0;
pub const BATCH_STREAM: u64 = 1;
pub const PERTURB_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingConfig {
    pub warmup: usize,
    /// Timed iterations; at least 30.
    pub iters: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig { warmup: 5, iters: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub median_s: f64,
    pub mean_s: f64,
    /// Coefficient of variation of the timed samples.
    pub cv: f64,
    pub iters: usize,
}

/// Times `f` `cfg.iters` times after `cfg.warmup` untimed calls.
pub fn time_median(cfg: TimingConfig, mut f: impl FnMut() -> Result<()>) -> Result<Timing> {
    Ok(time_interleaved(cfg, &mut [&mut f])?[0])
}

/// Times several bodies round-robin, so slow drift in machine load affects
/// them all alike instead of biasing whichever ran last.
pub fn time_interleaved(cfg: TimingConfig, bodies: &mut [&mut dyn FnMut() -> Result<()>]) -> Result<Vec<Timing>> {
    if cfg.iters < 30 {
        return Err(Error::Validation(format!("need at least 30 timed iterations, got {}", cfg.iters)));
    }
    for _ in 0..cfg.warmup {
        for f in bodies.iter_mut() {
            f()?;
        }
    }
    let mut samples = vec![Vec::with_capacity(cfg.iters); bodies.len()];
    for _ in 0..cfg.iters {
        for (f, out) in bodies.iter_mut().zip(&mut samples) {
            let start = Instant::now();
            f()?;
            out.push(start.elapsed().as_secs_f64());
        }
    }
    Ok(samples.into_iter().map(summarize).collect())
}

fn summarize(mut samples: Vec<f64>) -> Timing {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0);
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    let median = if samples.len().is_multiple_of(2) {
        0.5 * (samples[mid - 1] + samples[mid])
    } else {
        samples[mid]
    };
    Timing {
        median_s: median,
        mean_s: mean,
        cv: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
        iters: samples.len(),
    }
}

/// Median cost of timing an empty body.
pub fn timing_overhead(cfg: TimingConfig) -> Result<Timing> {
    time_median(cfg, || Ok(()))
}

/// Fixed, pre-gathered batches so that timed sections exclude data loading.
pub fn fixed_batches(data: &Dataset, batch_size: usize, count: usize, seed: u64) -> Result<Vec<Batch>> {
    let mut it = BatchIterator::new(data.len(), batch_size, RngState::derive(seed, BATCH_STREAM))?;
    (0..count).map(|_| data.batch(&it.next_indices())).collect()
}

/// Forward-only loss evaluation: no derivatives, no update.
pub fn measure_base(spec: &ModelSpec, params: &ParamSet, batches: &[Batch], cfg: TimingConfig) -> Result<Timing> {
    let mut i = 0;
    time_median(cfg, || {
        let b = &batches[i % batches.len()];
        i += 1;
        evaluate(&ModelLoss::new(spec, &b.images, &b.labels), params)?;
        Ok(())
    })
}

/// One full optimizer step (derivatives and update) of `method`.
pub fn measure_step(
    spec: &ModelSpec,
    params: &ParamSet,
    batches: &[Batch],
    method: Method,
    lr: f64,
    seed: u64,
    cfg: TimingConfig,
) -> Result<Timing> {
    let mut params = params.clone();
    let mut state = OptState::new(lr, 0.0, RngState::derive(seed, PERTURB_STREAM))?;
    let mut i = 0;
    time_median(cfg, || {
        let b = &batches[i % batches.len()];
        i += 1;
        optim::step(method, &ModelLoss::new(spec, &b.images, &b.labels), &mut params, &mut state)?;
        Ok(())
    })
}

/// `R = step median / base median`.
pub fn measure_mode(
    spec: &ModelSpec,
    params: &ParamSet,
    batches: &[Batch],
    method: Method,
    lr: f64,
    seed: u64,
    cfg: TimingConfig,
) -> Result<f64> {
    let base = measure_base(spec, params, batches, cfg)?;
    let step = measure_step(spec, params, batches, method, lr, seed, cfg)?;
    Ok(step.median_s / base.median_s)
}

/// Base evaluation and one step of each method, timed interleaved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeTimings {
    pub base: Timing,
    pub fgd: Timing,
    pub backprop: Timing,
}

impl ModeTimings {
    pub fn rf(&self) -> f64 {
        self.fgd.median_s / self.base.median_s
    }

    pub fn rb(&self) -> f64 {
        self.backprop.median_s / self.base.median_s
    }
}

pub fn measure_modes(
    spec: &ModelSpec,
    params: &ParamSet,
    batches: &[Batch],
    lr: f64,
    seed: u64,
    cfg: TimingConfig,
) -> Result<ModeTimings> {
    let batch = |i: &mut usize| {
        let b = &batches[*i % batches.len()];
        *i += 1;
        b
    };
    let (mut ib, mut i_f, mut i_b) = (0, 0, 0);
    let mut base = || {
        let b = batch(&mut ib);
        evaluate(&ModelLoss::new(spec, &b.images, &b.labels), params).map(drop)
    };
    let stepper = |method: Method| -> Result<_> {
        let mut p = params.clone();
        let mut state = OptState::new(lr, 0.0, RngState::derive(seed, PERTURB_STREAM))?;
        Ok(move |b: &Batch| {
            optim::step(method, &ModelLoss::new(spec, &b.images, &b.labels), &mut p, &mut state).map(drop)
        })
    };
    let (mut fgd_step, mut bp_step) = (stepper(Method::Fgd)?, stepper(Method::Backprop)?);
    let mut fgd = || fgd_step(batch(&mut i_f));
    let mut bp = || bp_step(batch(&mut i_b));
    let t = time_interleaved(cfg, &mut [&mut base, &mut fgd, &mut bp])?;
    Ok(ModeTimings {
        base: t[0],
        fgd: t[1],
        backprop: t[2],
    })
}

/// Peak tracked elements of one gradient computation, above what was live
/// before it. For the forward method the parameters' tangents are seeded
/// first, so the figure covers only the evaluation's own working set.
pub fn peak_elements(spec: &ModelSpec, params: &ParamSet, batch: &Batch, method: Method, seed: u64) -> Result<usize> {
    let program = ModelLoss::new(spec, &batch.images, &batch.labels);
    match method {
        Method::Fgd => {
            let mut rng = RngState::derive(seed, PERTURB_STREAM);
            let v = fwdad::sample_perturbation(&mut rng, params.numel())?;
            let duals = fwdad::seed(params, &v)?;
            let (r, peak) = alloc::measure_peak(|| fwdad::jvp(&program, &duals));
            r?;
            Ok(peak)
        }
        Method::Backprop => {
            let (r, peak) = alloc::measure_peak(|| revad::grad(&program, params));
            r?;
            Ok(peak)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveRow {
    pub method: Method,
    /// Iterations completed when the row was taken.
    pub iteration: u64,
    /// Cumulative optimizer time, excluding validation.
    pub wall_ms: f64,
    /// Loss on the minibatch of this iteration, before the update.
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub lr0: f64,
    pub decay: f64,
    pub iters: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Validation loss every this many iterations (and after the last).
    pub valid_every: u64,
    /// Validation examples used, from the head of the validation set.
    pub valid_limit: usize,
}

/// Trains one model with `method`. Initialization and the minibatch stream
/// depend only on `cfg.seed`, so runs of both methods are paired. `on_row`
/// sees every row as it is produced.
pub fn run_training(
    cfg: &TrainConfig,
    method: Method,
    train: &Dataset,
    valid: &Dataset,
    mut on_row: impl FnMut(&CurveRow) -> Result<()>,
) -> Result<(ParamSet, Vec<CurveRow>)> {
    let spec = &cfg.model;
    let mut params = nn::init(spec, &mut RngState::derive(cfg.seed, INIT_STREAM))?;
    let mut batches = BatchIterator::new(train.len(), cfg.batch_size, RngState::derive(cfg.seed, BATCH_STREAM))?;
    let mut state = OptState::new(cfg.lr0, cfg.decay, RngState::derive(cfg.seed, PERTURB_STREAM))?;
    let valid_batch = valid.head(cfg.valid_limit.max(1))?;
    let valid_every = cfg.valid_every.max(1);
    let mut rows = Vec::with_capacity(cfg.iters as usize);
    let mut wall = 0.0;
    for t in 0..cfg.iters {
        let batch = train.batch(&batches.next_indices())?;
        let program = ModelLoss::new(spec, &batch.images, &batch.labels);
        let start = Instant::now();
        let report = optim::step(method, &program, &mut params, &mut state)?;
        wall += start.elapsed().as_secs_f64() * 1e3;
        if !report.loss.is_finite() {
            return Err(Error::NonFinite {
                iteration: t,
                value: report.loss,
            });
        }
        let done = t + 1;
        let valid_loss = if done % valid_every == 0 || done == cfg.iters {
            let v = nn::forward(spec, &params, &valid_batch.images, &valid_batch.labels)?;
            if !v.is_finite() {
                return Err(Error::NonFinite { iteration: t, value: v });
            }
            Some(v)
        } else {
            None
        };
        let row = CurveRow {
            method,
            iteration: done,
            wall_ms: wall,
            train_loss: report.loss,
            valid_loss,
        };
        on_row(&row)?;
        rows.push(row);
    }
    Ok((params, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Ratio {
    Value(f64),
    Unreached(Unreached),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Unreached {
    Unreached,
}

impl Ratio {
    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Value(v) => Some(v),
            Ratio::Unreached(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossTime {
    /// Backprop's lowest validation loss.
    pub target_loss: f64,
    pub tb_ms: f64,
    pub tf_ms: Option<f64>,
    pub tf_over_tb: Ratio,
}

/// `T_b` is the time of backprop's lowest validation loss; `T_f` the first
/// time the forward curve reaches that loss.
pub fn loss_time_ratio(backprop: &[CurveRow], forward: &[CurveRow]) -> Result<LossTime> {
    let (target_loss, tb_ms) = backprop
        .iter()
        .filter_map(|r| r.valid_loss.map(|v| (v, r.wall_ms)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .ok_or_else(|| Error::Validation("backprop curve has no validation losses".into()))?;
    let tf_ms = forward
        .iter()
        .find(|r| r.valid_loss.is_some_and(|v| v <= target_loss))
        .map(|r| r.wall_ms);
    let tf_over_tb = match tf_ms {
        Some(tf) if tb_ms > 0.0 => Ratio::Value(tf / tb_ms),
        Some(_) => Ratio::Value(1.0),
        None => Ratio::Unreached(Unreached::Unreached),
    };
    Ok(LossTime {
        target_loss,
        tb_ms,
        tf_ms,
        tf_over_tb,
    })
}

/// Published reference values, carried in reports for comparison only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reference {
    pub rf: Option<f64>,
    pub rb: Option<f64>,
    pub rf_over_rb: f64,
    pub tf_over_tb: f64,
}

pub fn reference(spec: &ModelSpec) -> Option<Reference> {
    match spec {
        ModelSpec::Logreg { .. } => Some(Reference {
            rf: Some(2.435),
            rb: Some(4.389),
            rf_over_rb: 0.555,
            tf_over_tb: 0.553,
        }),
        ModelSpec::Mlp { bias: true, .. } => Some(Reference {
            rf: None,
            rb: None,
            rf_over_rb: 0.592,
            tf_over_tb: 0.211,
        }),
        ModelSpec::Cnn { .. } => Some(Reference {
            rf: None,
            rb: None,
            rf_over_rb: 0.649,
            tf_over_tb: 0.514,
        }),
        ModelSpec::Mlp { .. } => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub config: TrainConfig,
    pub timing: TimingConfig,
    pub num_params: usize,
    pub base_runtime_s: f64,
    pub base_cv: f64,
    pub timing_overhead_s: f64,
    pub rf: f64,
    pub rb: f64,
    pub rf_over_rb: f64,
    pub loss_time: LossTime,
    pub fgd_peak_elements: usize,
    pub backprop_peak_elements: usize,
    pub reference: Option<Reference>,
    pub curves: Vec<CurveRow>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Measures everything in a [`BenchReport`] for one model.
pub fn run_bench(cfg: &TrainConfig, timing: TimingConfig, train: &Dataset, valid: &Dataset) -> Result<BenchReport> {
    let spec = &cfg.model;
    let params = nn::init(spec, &mut RngState::derive(cfg.seed, INIT_STREAM))?;
    let batches = fixed_batches(train, cfg.batch_size, 8, cfg.seed)?;
    let overhead = timing_overhead(timing)?;
    let modes = measure_modes(spec, &params, &batches, cfg.lr0, cfg.seed, timing)?;
    let (base, rf, rb) = (modes.base, modes.rf(), modes.rb());
    let fgd_peak = peak_elements(spec, &params, &batches[0], Method::Fgd, cfg.seed)?;
    let bp_peak = peak_elements(spec, &params, &batches[0], Method::Backprop, cfg.seed)?;
    let (_, bp_curve) = run_training(cfg, Method::Backprop, train, valid, |_| Ok(()))?;
    let (_, fgd_curve) = run_training(cfg, Method::Fgd, train, valid, |_| Ok(()))?;
    let loss_time = loss_time_ratio(&bp_curve, &fgd_curve)?;
    let mut curves = fgd_curve;
    curves.extend(bp_curve);
    Ok(BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: cfg.clone(),
        timing,
        num_params: params.numel(),
        base_runtime_s: base.median_s,
        base_cv: base.cv,
        timing_overhead_s: overhead.median_s,
        rf,
        rb,
        rf_over_rb: rf / rb,
        loss_time,
        fgd_peak_elements: fgd_peak,
        backprop_peak_elements: bp_peak,
        reference: reference(spec),
        curves,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingRow {
    pub depth: usize,
    pub width: usize,
    pub num_params: usize,
    pub base_runtime_s: f64,
    pub rf: f64,
    pub rb: f64,
    pub fgd_peak_elements: usize,
    pub backprop_peak_elements: usize,
}

/// Bias-free MLPs of `width` units at each depth, measured on the same
/// batches.
pub fn scaling_sweep(
    depths: &[usize],
    width: usize,
    data: &Dataset,
    batch_size: usize,
    seed: u64,
    timing: TimingConfig,
) -> Result<Vec<ScalingRow>> {
    if depths.is_empty() || depths.windows(2).any(|w| w[0] >= w[1]) || depths[0] == 0 {
        return Err(Error::Validation(format!("depths must be positive and strictly ascending, got {depths:?}")));
    }
    let batches = fixed_batches(data, batch_size, 4, seed)?;
    let mut rows = Vec::with_capacity(depths.len());
    for &depth in depths {
        let spec = ModelSpec::mlp_depth(depth, width);
        let params = nn::init(&spec, &mut RngState::derive(seed, INIT_STREAM))?;
        // a tiny rate keeps the timed updates from diverging
        let modes = measure_modes(&spec, &params, &batches, 1e-9, seed, timing)?;
        rows.push(ScalingRow {
            depth,
            width,
            num_params: params.numel(),
            base_runtime_s: modes.base.median_s,
            rf: modes.rf(),
            rb: modes.rb(),
            fgd_peak_elements: peak_elements(&spec, &params, &batches[0], Method::Fgd, seed)?,
            backprop_peak_elements: peak_elements(&spec, &params, &batches[0], Method::Backprop, seed)?,
        });
    }
    Ok(rows)
}
