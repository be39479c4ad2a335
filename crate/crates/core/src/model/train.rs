//! Training schedules.
//!
//! - hard: every step takes one batch and minimizes the combined loss of
//!   its classification and generation encodings.
//! - soft: two models (`m1.` classifies, `m2.` generates) stepped jointly
//!   on the combined loss plus the encoder penalty. Both start from the
//!   same initialization.
//! - inf: `rounds` repetitions of `steps_per_phase` generation-only steps
//!   followed by `steps_per_phase` classification-only steps. `steps`
//!   in [`TrainOptions`] does not apply.
//!
//! The returned best parameters are those with the highest validation
//! accuracy, ties going to the lower validation classification loss and
//! then to the earlier step. Validation runs every `eval_every` steps and
//! at the end of every phase that trains the classifier.

use rand::{RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_xoshiro::SplitMix64;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};

use crate::dataset::PairedSample;
use crate::nn::{Adam, ParamStore, Reduction};
use crate::scalar::Scalar;

use super::loss::{batch_loss, target_class, BatchLoss, Objective, PassOptions};
use super::ranker::{Forward, Models, RankerModel};
use super::{ModelConfig, ModelError, TrainStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub eval_every: usize,
    /// Threads used to spread a batch; results do not depend on it.
    pub workers: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 2000,
            batch_size: 8,
            lr: 1e-4,
            seed: 7,
            eval_every: 100,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Joint,
    Gen,
    Cls,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub phase: Phase,
    pub cls_loss: Option<f64>,
    pub gen_loss: Option<f64>,
    pub total: f64,
    pub penalty: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// Emitted at the start and end of every phase.
pub struct PhaseEvent<'s, T> {
    pub phase: Phase,
    pub round: usize,
    pub end: bool,
    pub store: &'s ParamStore<T>,
}

#[derive(Debug, Clone)]
pub struct TrainResult<T> {
    pub best: ParamStore<T>,
    pub last: ParamStore<T>,
    pub models: Models,
    pub best_step: usize,
    pub best_val_accuracy: Option<f64>,
    pub log: Vec<TrainLogEntry>,
}

struct Seeds {
    init: u64,
    data: u64,
    dropout: u64,
}

fn seeds(seed: u64) -> Seeds {
    let mut rng = SplitMix64::seed_from_u64(seed);
    Seeds {
        init: rng.next_u64(),
        data: rng.next_u64(),
        dropout: rng.next_u64(),
    }
}

/// Fresh parameters for `strategy`, as training would start from with
/// `seed`.
pub fn init_params<T: Scalar>(
    cfg: &ModelConfig,
    strategy: &TrainStrategy,
    seed: u64,
) -> Result<(ParamStore<T>, Models), ModelError> {
    cfg.validate()?;
    strategy.validate()?;
    let init = seeds(seed).init;
    let mut store = ParamStore::new();
    let models = match strategy {
        TrainStrategy::Soft { .. } => Models {
            cls: RankerModel::init(&mut store, cfg, "m1.", init)?,
            gen: RankerModel::init(&mut store, cfg, "m2.", init)?,
        },
        _ => Models::shared(RankerModel::init(&mut store, cfg, "", init)?),
    };
    Ok((store, models))
}

/// Optimizer state plus an endless reshuffled stream over the training
/// samples.
pub struct Trainer<'d, T: Scalar> {
    pub store: ParamStore<T>,
    pub models: Models,
    pub step: usize,
    adam: Adam,
    data: &'d [PairedSample],
    order: Vec<usize>,
    cursor: usize,
    rng: SplitMix64,
    batch_size: usize,
    dropout_seed: u64,
    pool: Option<ThreadPool>,
}

impl<'d, T: Scalar> Trainer<'d, T> {
    pub fn new(
        cfg: &ModelConfig,
        strategy: &TrainStrategy,
        opts: &TrainOptions,
        data: &'d [PairedSample],
    ) -> Result<Self, ModelError> {
        if data.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        if opts.batch_size == 0 || !(opts.lr > 0.0) {
            return Err(ModelError::Config(format!(
                "batch_size ({}) and lr ({}) must be positive",
                opts.batch_size, opts.lr
            )));
        }
        let (store, models) = init_params(cfg, strategy, opts.seed)?;
        let s = seeds(opts.seed);
        let pool = if opts.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(opts.workers)
                    .build()
                    .map_err(|e| ModelError::Config(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Trainer {
            store,
            models,
            step: 0,
            adam: Adam::with_lr(opts.lr),
            data,
            order: Vec::new(),
            cursor: 0,
            rng: SplitMix64::seed_from_u64(s.data),
            batch_size: opts.batch_size,
            dropout_seed: s.dropout,
            pool,
        })
    }

    fn next_batch(&mut self) -> Vec<&'d PairedSample> {
        let mut batch = Vec::with_capacity(self.batch_size);
        while batch.len() < self.batch_size {
            if self.cursor == self.order.len() {
                self.order = (0..self.data.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(&self.data[self.order[self.cursor]]);
            self.cursor += 1;
        }
        batch
    }

    /// One optimizer step on the next batch.
    pub fn run_step(&mut self, objective: Objective) -> Result<BatchLoss<T>, ModelError> {
        let batch = self.next_batch();
        let opts = PassOptions {
            grads: true,
            dropout_seed: Some(self.dropout_seed ^ self.step as u64),
            pool: self.pool.as_ref(),
        };
        let loss = batch_loss(&self.store, &self.models, objective, &batch, opts)?;
        self.step += 1;
        for (what, v) in [
            ("total", Some(loss.total)),
            ("cls_loss", loss.cls),
            ("gen_loss", loss.gen),
            ("penalty", loss.penalty),
        ] {
            if let Some(v) = v.filter(|v| !v.is_finite()) {
                return Err(ModelError::DivergedLoss {
                    step: self.step,
                    what,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        self.store.zero_grads();
        self.store.accumulate(&loss.grads);
        self.adam.step(&mut self.store);
        Ok(loss)
    }

    /// Validation accuracy and mean classification loss.
    pub fn validate(&self, samples: &[PairedSample]) -> Result<(f64, f64), ModelError> {
        validate(&self.store, &self.models.cls, samples)
    }
}

/// Class logits of one encoded input.
pub(crate) fn class_logits<T: Scalar>(
    store: &ParamStore<T>,
    model: &RankerModel,
    input_ids: &[u32],
) -> Result<Vec<T>, ModelError> {
    let mut f = Forward::new(store, None);
    let enc = f.encode(model, input_ids)?;
    let logits = f.cls_logits(model, enc)?;
    Ok(f.tape.value(logits).to_vec())
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Accuracy of the classification head and its mean cross-entropy.
pub fn validate<T: Scalar>(
    store: &ParamStore<T>,
    model: &RankerModel,
    samples: &[PairedSample],
) -> Result<(f64, f64), ModelError> {
    if samples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for s in samples {
        let label = target_class(s.cls.label, model.config.n_classes);
        let mut f = Forward::new(store, None);
        let enc = f.encode(model, &s.cls.input_ids)?;
        let logits = f.cls_logits(model, enc)?;
        if argmax(f.tape.value(logits)) == label {
            correct += 1;
        }
        let ce = f.tape.cross_entropy(logits, &[label], None, Reduction::Sum)?;
        loss += f.tape.scalar(ce).to_f64().unwrap_or(f64::NAN);
    }
    let n = samples.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

fn schedule(cfg: &ModelConfig, strategy: &TrainStrategy, steps: usize) -> Vec<(Phase, usize, Objective)> {
    let lambda = cfg.lambda_weight;
    match *strategy {
        TrainStrategy::Hard => vec![(Phase::Joint, steps, Objective::Hard { lambda })],
        TrainStrategy::Soft { sharing_coeff } => vec![(
            Phase::Joint,
            steps,
            Objective::Soft {
                lambda,
                sharing_coeff,
            },
        )],
        TrainStrategy::Inf {
            steps_per_phase,
            rounds,
        } => (0..rounds)
            .flat_map(|_| {
                [
                    (Phase::Gen, steps_per_phase, Objective::Gen),
                    (Phase::Cls, steps_per_phase, Objective::Cls),
                ]
            })
            .collect(),
    }
}

pub fn train<T: Scalar>(
    cfg: &ModelConfig,
    strategy: &TrainStrategy,
    opts: &TrainOptions,
    train_set: &[PairedSample],
    val_set: &[PairedSample],
) -> Result<TrainResult<T>, ModelError> {
    train_with_observer(cfg, strategy, opts, train_set, val_set, |_| {})
}

pub fn train_with_observer<T: Scalar>(
    cfg: &ModelConfig,
    strategy: &TrainStrategy,
    opts: &TrainOptions,
    train_set: &[PairedSample],
    val_set: &[PairedSample],
    mut observer: impl FnMut(PhaseEvent<'_, T>),
) -> Result<TrainResult<T>, ModelError> {
    let mut trainer = Trainer::<T>::new(cfg, strategy, opts, train_set)?;
    let mut log = Vec::new();
    let mut best: Option<(f64, f64, usize, ParamStore<T>)> = None;
    let eval_every = opts.eval_every.max(1);

    for (i, (phase, n, objective)) in schedule(cfg, strategy, opts.steps).into_iter().enumerate() {
        let round = i / 2;
        observer(PhaseEvent {
            phase,
            round,
            end: false,
            store: &trainer.store,
        });
        for k in 0..n {
            let loss = trainer.run_step(objective)?;
            let f = |v: T| v.to_f64().unwrap_or(f64::NAN);
            let mut entry = TrainLogEntry {
                step: trainer.step,
                phase,
                cls_loss: loss.cls.map(f),
                gen_loss: loss.gen.map(f),
                total: f(loss.total),
                penalty: loss.penalty.map(f),
                val_accuracy: None,
            };
            let due = trainer.step % eval_every == 0 || k + 1 == n;
            if phase != Phase::Gen && !val_set.is_empty() && due {
                let (acc, vloss) = trainer.validate(val_set)?;
                entry.val_accuracy = Some(acc);
                let better = match &best {
                    None => true,
                    Some((a, l, _, _)) => acc > *a || (acc == *a && vloss < *l),
                };
                if better {
                    best = Some((acc, vloss, trainer.step, trainer.store.clone()));
                }
            }
            log.push(entry);
        }
        observer(PhaseEvent {
            phase,
            round,
            end: true,
            store: &trainer.store,
        });
    }

    let last = trainer.store;
    let (best_store, best_step, best_acc) = match best {
        Some((acc, _, step, store)) => (store, step, Some(acc)),
        None => (last.clone(), trainer.step, None),
    };
    Ok(TrainResult {
        best: best_store,
        last,
        models: trainer.models,
        best_step,
        best_val_accuracy: best_acc,
        log,
    })
}
