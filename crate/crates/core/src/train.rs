//! Mini-batch Adam training under `MAE + lambda * fairness`.
//!
//! Per-sample gradients are computed independently (in parallel with the
//! `parallel` feature) and summed in sample order, so results do not depend
//! on the thread count.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::{CompositeLoss, FairnessConfig, GroupLabeling, RegularizerKind};
use crate::ingest::{DemographicField, FeatureStack2D, TemporalSlice};
use crate::model::{build_forward, Model};
use crate::tensor::{AdamState, Graph, LrSchedule, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: LrSchedule,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Worker threads for per-sample gradients; `Some(1)` is fully serial.
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            seed: 0,
            lr: LrSchedule::default(),
            checkpoint_every: 0,
            checkpoint_dir: None,
            threads: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads must be at least 1"));
        }
        Ok(())
    }
}

/// Everything the fairness term needs besides predictions and truth.
#[derive(Debug, Clone, Copy)]
pub struct FairnessContext<'a> {
    pub config: &'a FairnessConfig,
    pub field: &'a DemographicField,
    pub labelings: &'a BTreeMap<String, GroupLabeling>,
}

impl FairnessContext<'_> {
    fn active(&self) -> bool {
        self.config.kind != RegularizerKind::None && !self.config.attributes.is_empty()
    }
}

/// `total = acc + lambda * fair`, each a mean over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub acc: f64,
    pub fair: f64,
}

struct SampleOut {
    acc: f64,
    fair: f64,
    grads: Option<Vec<Tensor>>,
}

fn sample(
    model: &Model,
    slice: &TemporalSlice,
    features: &FeatureStack2D,
    fair: &FairnessContext,
    inv_batch: f64,
    with_grad: bool,
) -> Result<SampleOut> {
    let mut g = Graph::new();
    let fwd = build_forward(
        &mut g,
        &model.params,
        &slice.history,
        &slice.history_1d,
        &features.maps,
        model.demand_scale,
        with_grad,
    )?;
    let acc = g.mean_abs_error(fwd.prediction, &slice.target)?;
    let mut loss = g.scale(acc, inv_batch)?;
    let mut fair_value = 0.0;
    if fair.active() {
        let objective = CompositeLoss::new(&slice.target, fair.config, fair.field, fair.labelings)?;
        let f = g.objective(fwd.prediction, &objective)?;
        fair_value = g.value(f).data()[0];
        if fair.config.lambda != 0.0 {
            let f = g.scale(f, fair.config.lambda * inv_batch)?;
            loss = g.add(loss, f)?;
        }
    }
    let acc_value = g.value(acc).data()[0];
    let grads = if with_grad {
        let mut gr = g.backward(loss)?;
        Some(fwd.params.iter().map(|(_, id)| gr.take(*id)).collect())
    } else {
        None
    };
    Ok(SampleOut {
        acc: acc_value,
        fair: fair_value,
        grads,
    })
}

fn run_samples(
    model: &Model,
    batch: &[&TemporalSlice],
    features: &FeatureStack2D,
    fair: &FairnessContext,
    with_grad: bool,
) -> Result<Vec<SampleOut>> {
    let inv = 1.0 / batch.len() as f64;
    let one = |s: &&TemporalSlice| sample(model, s, features, fair, inv, with_grad);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if rayon::current_num_threads() > 1 {
            return batch.par_iter().map(one).collect();
        }
    }
    batch.iter().map(one).collect()
}

fn combine(outs: &[SampleOut], lambda: f64) -> LossParts {
    let n = outs.len() as f64;
    let acc = outs.iter().map(|o| o.acc).sum::<f64>() / n;
    let fair = outs.iter().map(|o| o.fair).sum::<f64>() / n;
    LossParts {
        total: acc + lambda * fair,
        acc,
        fair,
    }
}

fn check_batch(batch: &[&TemporalSlice], model: &Model) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let cells = model.arch().rows * model.arch().cols;
    if let Some(s) = batch.iter().find(|s| s.target.len() != cells) {
        return Err(Error::invalid(format!(
            "slice target has {} cells, model expects {cells}",
            s.target.len()
        )));
    }
    Ok(())
}

/// Batch objective without gradients.
pub fn batch_loss(
    batch: &[&TemporalSlice],
    model: &Model,
    features: &FeatureStack2D,
    fair: &FairnessContext,
) -> Result<LossParts> {
    check_batch(batch, model)?;
    Ok(combine(
        &run_samples(model, batch, features, fair, false)?,
        fair.config.lambda,
    ))
}

/// Batch objective and its gradient for every parameter, in
/// [`crate::model::ModelParams::iter`] order.
pub fn batch_gradients(
    batch: &[&TemporalSlice],
    model: &Model,
    features: &FeatureStack2D,
    fair: &FairnessContext,
) -> Result<(LossParts, Vec<Tensor>)> {
    check_batch(batch, model)?;
    let outs = run_samples(model, batch, features, fair, true)?;
    let parts = combine(&outs, fair.config.lambda);
    let mut total: Option<Vec<Tensor>> = None;
    for o in outs {
        let g = o.grads.expect("gradients requested");
        match &mut total {
            None => total = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.data_mut()
                        .iter_mut()
                        .zip(b.data())
                        .for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    Ok((parts, total.expect("non-empty batch")))
}

/// Largest demand value seen in the slices (history or target); 1 if none
/// is positive.
pub fn demand_scale(slices: &[TemporalSlice]) -> f64 {
    let m = slices
        .iter()
        .flat_map(|s| s.history.iter().chain(&s.target))
        .copied()
        .fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean accuracy loss over the epoch's batches.
    pub acc_loss: f64,
    pub fair_loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub batch: usize,
    pub lr: f64,
    pub loss: LossParts,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    /// Per-epoch CSV: `epoch,acc_loss,fair_loss,lr,seconds`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,acc_loss,fair_loss,lr,seconds\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                e.epoch, e.acc_loss, e.fair_loss, e.lr, e.seconds
            ));
        }
        s
    }
}

/// Trains `model` in place from its current parameters.
pub fn train_model(
    model: &mut Model,
    slices: &[TemporalSlice],
    features: &FeatureStack2D,
    fair: &FairnessContext,
    config: &TrainConfig,
) -> Result<TrainLog> {
    train_model_with(model, slices, features, fair, config, |_| {})
}

/// [`train_model`] with a callback after every epoch.
pub fn train_model_with(
    model: &mut Model,
    slices: &[TemporalSlice],
    features: &FeatureStack2D,
    fair: &FairnessContext,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    config.validate()?;
    fair.config.validate()?;
    if slices.is_empty() {
        return Err(Error::invalid("no training slices"));
    }
    let pool = make_pool(config.threads)?;
    train_loop(
        model,
        slices,
        features,
        fair,
        config,
        pool.as_ref(),
        on_epoch,
    )
}

#[cfg(feature = "parallel")]
type Pool = rayon::ThreadPool;
#[cfg(not(feature = "parallel"))]
struct Pool;

#[cfg(feature = "parallel")]
fn make_pool(threads: Option<usize>) -> Result<Option<Pool>> {
    threads
        .map(|n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))
        })
        .transpose()
}

#[cfg(not(feature = "parallel"))]
fn make_pool(_threads: Option<usize>) -> Result<Option<Pool>> {
    Ok(None)
}

fn in_pool<T: Send>(pool: Option<&Pool>, f: impl FnOnce() -> T + Send) -> T {
    match pool {
        #[cfg(feature = "parallel")]
        Some(p) => p.install(f),
        _ => f(),
    }
}

fn train_loop(
    model: &mut Model,
    slices: &[TemporalSlice],
    features: &FeatureStack2D,
    fair: &FairnessContext,
    config: &TrainConfig,
    pool: Option<&Pool>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(model.params.iter().map(|(_, t)| t));
    let mut order: Vec<usize> = (0..slices.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut acc_sum, mut fair_sum) = (0.0, 0.0);
        let mut lr = config.lr.lr_at(adam.steps_taken());
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TemporalSlice> = chunk.iter().map(|&i| &slices[i]).collect();
            let (parts, grads) = in_pool(pool, || batch_gradients(&batch, model, features, fair))?;
            if !parts.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { epoch, batch: bi });
            }
            let step = adam.steps_taken();
            lr = config.lr.lr_at(step);
            adam.step(model.params.tensors_mut(), &grads, lr)?;
            acc_sum += parts.acc * batch.len() as f64;
            fair_sum += parts.fair * batch.len() as f64;
            log.steps.push(StepRecord {
                step,
                epoch,
                batch: bi,
                lr,
                loss: parts,
            });
        }
        let n = slices.len() as f64;
        let rec = EpochRecord {
            epoch,
            acc_loss: acc_sum / n,
            fair_loss: fair_sum / n,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        log.epochs.push(rec);
        if config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0 {
            if let Some(dir) = &config.checkpoint_dir {
                model.save(&dir.join(format!("epoch_{:04}.json", epoch + 1)))?;
            }
        }
    }
    Ok(log)
}
