//! Adam optimization with binary cross-entropy, and stratified k-fold
//! cross-validation over a [`PatchDataset`].
//!
//! Every stochastic choice is derived from the configured seed: the epoch
//! index selects the shuffle and dropout streams, and the fold index
//! selects the initialization stream and the fold's training seed.

mod adam;
mod folds;

use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use folds::{stratified_kfold, FoldSplit};

use crate::autodiff::Tape;
use crate::blocks::{ForwardCtx, Model, ModelSpec};
use crate::data::PatchDataset;
use crate::error::{Error, Result};
use crate::metrics::{self, ConfusionCounts, MetricsReport, DECISION_THRESHOLD};
use crate::rng::Rng;

/// Optimizer and schedule settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// 50 epochs with batches of 256.
    pub fn full() -> Self {
        Self {
            epochs: 50,
            learning_rate: 0.001,
            batch_size: 256,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }

    /// 20 epochs with batches of 32, sized for the synthetic dataset.
    pub fn desk() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.adam_epsilon.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return fail(format!(
                "adam_epsilon must be > 0, got {}",
                self.adam_epsilon
            ));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Mean training loss of each epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub epochs: Vec<f64>,
}

/// Trains `model` on the samples at `indices`.
///
/// Batches follow a fresh shuffle each epoch; the last partial batch is
/// kept. `on_epoch` receives the epoch index and its mean loss.
pub fn train(
    model: &mut Model<f32>,
    ds: &PatchDataset,
    indices: &[usize],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<LossTrace> {
    config.validate()?;
    if indices.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let names = model.param_names();
    let mut state = AdamState::new(&model.params());
    let mut trace = LossTrace::default();
    let mut order = indices.to_vec();

    for epoch in 0..config.epochs {
        order.copy_from_slice(indices);
        order.shuffle(&mut Rng::derive_indexed(
            config.seed,
            "shuffle",
            epoch as u64,
        ));
        let mut dropout_rng = Rng::derive_indexed(config.seed, "dropout", epoch as u64);
        let mut total = 0.0;

        for (batch_index, batch) in order.chunks(config.batch_size).enumerate() {
            let targets: Vec<f32> = batch.iter().map(|&i| f32::from(ds.label(i))).collect();
            let mut tape = Tape::new();
            let x = tape.constant(ds.batch(batch));
            let mut ctx = ForwardCtx::train(&mut dropout_rng);
            let probs = model.forward(&mut tape, x, &mut ctx)?;
            let loss = tape.bce_loss(probs, &targets)?;
            let loss_value = f64::from(tape.value(loss).item());
            if !loss_value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_index,
                });
            }
            total += loss_value * batch.len() as f64;

            let grads = tape.backward(loss)?;
            let param_vars = std::mem::take(&mut ctx.params);
            let bn_stats = std::mem::take(&mut ctx.bn_stats);
            let grad_refs: Vec<_> = param_vars
                .iter()
                .map(|&v| grads.get(v).expect("parameters always receive a gradient"))
                .collect();
            adam_step(
                &mut model.params_mut(),
                &grad_refs,
                &mut state,
                config,
                &names,
            )?;
            model.commit_bn_stats(bn_stats);
        }
        let mean = total / indices.len() as f64;
        trace.epochs.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(trace)
}

/// Samples scored per eval-mode forward pass.
const EVAL_CHUNK: usize = 64;

/// Eval-mode scores of the samples at `indices` plus the confusion counts
/// at threshold 0.5.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub scores: Vec<f64>,
    pub counts: ConfusionCounts,
}

pub fn evaluate(model: &Model<f32>, ds: &PatchDataset, indices: &[usize]) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut scores = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        scores.extend(model.predict(&ds.batch(chunk))?.into_iter().map(f64::from));
    }
    let labels: Vec<u8> = indices.iter().map(|&i| ds.label(i)).collect();
    let counts = metrics::confusion_at_threshold(&scores, &labels, DECISION_THRESHOLD)?;
    Ok(Evaluation { scores, counts })
}

/// One out-of-fold score.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledScore {
    pub index: usize,
    pub label: u8,
    pub score: f64,
    pub fold: usize,
}

#[derive(Clone, Debug)]
pub struct FoldResult {
    pub fold: usize,
    pub model: Model<f32>,
    pub loss: LossTrace,
    pub counts: ConfusionCounts,
    /// Test-fold AUC; `None` when the test fold holds a single class.
    pub auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct CrossValidation {
    pub folds: Vec<FoldResult>,
    /// One score per dataset sample, in dataset order.
    pub pooled: Vec<PooledScore>,
    pub report: MetricsReport,
}

/// Progress notifications from [`cross_validate`].
pub trait Progress: Sync {
    fn epoch(&self, _fold: usize, _epoch: usize, _loss: f64) {}
    fn fold_done(&self, _fold: usize) {}
}

/// Ignores all notifications.
pub struct Silent;

impl Progress for Silent {}

/// A trained fold plus its test-set scores.
type FoldOutcome = Result<(FoldResult, Vec<f64>)>;

/// Training seed of one fold.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    Rng::derive_indexed(seed, "fold", fold as u64).next_u64()
}

/// k-fold cross-validation of freshly built models.
///
/// Up to `threads` folds train concurrently. Results do not depend on the
/// thread count: each fold's randomness comes only from its own seeds and
/// results are merged by fold index.
pub fn cross_validate(
    spec: &ModelSpec,
    ds: &PatchDataset,
    config: &TrainConfig,
    k: usize,
    threads: usize,
    progress: &dyn Progress,
) -> Result<CrossValidation> {
    config.validate()?;
    let splits = stratified_kfold(ds.labels(), k, config.seed)?;
    let run_fold = |split: &FoldSplit| -> Result<(FoldResult, Vec<f64>)> {
        let fold = split.fold_index;
        let mut init = Rng::derive_indexed(config.seed, "init", fold as u64);
        let mut model = Model::build(spec.clone(), &mut init)?;
        let fold_config = TrainConfig {
            seed: fold_seed(config.seed, fold),
            ..config.clone()
        };
        let loss = train(&mut model, ds, &split.train, &fold_config, &mut |e, l| {
            progress.epoch(fold, e, l)
        })?;
        let eval = evaluate(&model, ds, &split.test)?;
        let labels: Vec<u8> = split.test.iter().map(|&i| ds.label(i)).collect();
        let auc = metrics::roc_points(&eval.scores, &labels)
            .ok()
            .map(|c| metrics::auc_trapezoid(&c));
        progress.fold_done(fold);
        Ok((
            FoldResult {
                fold,
                model,
                loss,
                counts: eval.counts,
                auc,
            },
            eval.scores,
        ))
    };

    let threads = threads.clamp(1, k);
    let results: Vec<FoldOutcome> = if threads == 1 {
        splits.iter().map(run_fold).collect()
    } else {
        let next = Mutex::new(0usize);
        let slots: Vec<Mutex<Option<FoldOutcome>>> =
            splits.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let i = {
                        let mut n = next.lock().expect("fold counter");
                        let i = *n;
                        *n += 1;
                        i
                    };
                    if i >= splits.len() {
                        break;
                    }
                    let r = run_fold(&splits[i]);
                    *slots[i].lock().expect("fold slot") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("fold slot").expect("every fold ran"))
            .collect()
    };

    let mut pooled: Vec<Option<PooledScore>> = vec![None; ds.len()];
    let mut folds = Vec::with_capacity(k);
    for (split, result) in splits.iter().zip(results) {
        let (fold_result, scores) = result?;
        for (&index, score) in split.test.iter().zip(scores) {
            pooled[index] = Some(PooledScore {
                index,
                label: ds.label(index),
                score,
                fold: split.fold_index,
            });
        }
        folds.push(fold_result);
    }
    let pooled: Vec<PooledScore> = pooled
        .into_iter()
        .map(|p| p.expect("folds partition the dataset"))
        .collect();
    let scores: Vec<f64> = pooled.iter().map(|p| p.score).collect();
    let report = MetricsReport::from_scores(&scores, ds.labels())?;
    Ok(CrossValidation {
        folds,
        pooled,
        report,
    })
}
