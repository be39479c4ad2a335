//! Training objectives.
//!
//! Each sample is run on its own tape; per-sample gradients are reduced in
//! batch order, so results do not depend on how many threads computed
//! them. Batch values:
//!
//! - classification: mean over samples of the one-hot cross-entropy of
//!   the label.
//! - generation: summed teacher-forced token cross-entropy divided by the
//!   number of predicted (non-pad) tokens in the batch.
//! - hard: `(1 - lambda) * cls + lambda * gen`.
//! - soft: the hard combination over two models plus
//!   `sharing_coeff * ||enc1 - enc2||`, the Euclidean norm taken jointly
//!   over every encoder parameter.

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::dataset::{PairedSample, PAD_ID};
use crate::nn::{merge_grads, GradMap, NnError, ParamStore, Tape};
use crate::scalar::Scalar;

use super::ranker::{Forward, Models, RankerModel, ENCODER_SCOPE};
use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Cls,
    Gen,
    Hard { lambda: f64 },
    Soft { lambda: f64, sharing_coeff: f64 },
}

impl Objective {
    fn weights(self) -> (f64, f64) {
        match self {
            Objective::Cls => (1.0, 0.0),
            Objective::Gen => (0.0, 1.0),
            Objective::Hard { lambda } | Objective::Soft { lambda, .. } => (1.0 - lambda, lambda),
        }
    }

    fn uses_cls(self) -> bool {
        !matches!(self, Objective::Gen)
    }

    fn uses_gen(self) -> bool {
        !matches!(self, Objective::Cls)
    }
}

#[derive(Clone, Copy, Default)]
pub struct PassOptions<'p> {
    /// Compute gradients as well as values.
    pub grads: bool,
    /// Dropout stream seed; `None` disables dropout.
    pub dropout_seed: Option<u64>,
    /// Spread samples over this pool.
    pub pool: Option<&'p ThreadPool>,
}

#[derive(Debug, Clone)]
pub struct BatchLoss<T> {
    pub cls: Option<T>,
    pub gen: Option<T>,
    pub penalty: Option<T>,
    pub total: T,
    pub grads: GradMap<T>,
}

struct SampleOut<T> {
    cls: T,
    gen: T,
    grads: GradMap<T>,
}

/// Class index under a model with `n_classes` outputs; binary folds both
/// failure classes together.
pub(crate) fn target_class(label: usize, n_classes: usize) -> usize {
    if n_classes == 2 {
        label.min(1)
    } else {
        label
    }
}

#[allow(clippy::too_many_arguments)]
fn sample_pass<T: Scalar>(
    store: &ParamStore<T>,
    models: &Models,
    objective: Objective,
    sample: &PairedSample,
    wc: T,
    wg: T,
    grads: bool,
    dropout: Option<(f64, u64)>,
) -> Result<SampleOut<T>, NnError> {
    let mut f = Forward::new(store, dropout);
    let mut parts = Vec::with_capacity(2);
    let mut cls = T::zero();
    let mut gen = T::zero();
    if objective.uses_cls() {
        let m = &models.cls;
        let label = target_class(sample.cls.label, m.config.n_classes);
        let ce = f.cls_ce(m, &sample.cls.input_ids, label)?;
        cls = f.tape.scalar(ce);
        parts.push(f.tape.scale(ce, wc));
    }
    if objective.uses_gen() {
        let ce = f.gen_ce(&models.gen, &sample.gen.input_ids, &sample.gen.target_ids)?;
        gen = f.tape.scalar(ce);
        parts.push(f.tape.scale(ce, wg));
    }
    let grads = if grads {
        let mut total = parts[0];
        for &p in &parts[1..] {
            total = f.tape.add(total, p)?;
        }
        f.tape.backward(total, T::one())?
    } else {
        GradMap::new()
    };
    Ok(SampleOut { cls, gen, grads })
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64
}

/// Loss value (and gradients when requested) of `objective` on `batch`.
pub fn batch_loss<T: Scalar>(
    store: &ParamStore<T>,
    models: &Models,
    objective: Objective,
    batch: &[&PairedSample],
    opts: PassOptions<'_>,
) -> Result<BatchLoss<T>, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let n_tok: usize = batch
        .iter()
        .map(|s| s.gen.target_ids.iter().skip(1).filter(|&&t| t != PAD_ID).count())
        .sum();
    let b = T::from_usize_lossy(batch.len());
    let ntok = T::from_usize_lossy(n_tok.max(1));
    let (lc, lg) = objective.weights();
    let (wc, wg) = (T::lit(lc) / b, T::lit(lg) / ntok);
    let dropout = |i: usize| {
        opts.dropout_seed
            .map(|s| (models.cls.config.dropout, sample_seed(s, i)))
    };
    let run = |(i, s): (usize, &&PairedSample)| {
        sample_pass(store, models, objective, s, wc, wg, opts.grads, dropout(i))
    };
    let outs: Vec<SampleOut<T>> = match opts.pool {
        Some(pool) => pool.install(|| batch.par_iter().enumerate().map(run).collect::<Result<_, _>>())?,
        None => batch.iter().enumerate().map(run).collect::<Result<_, _>>()?,
    };

    let mut grads = GradMap::new();
    let mut cls_sum = T::zero();
    let mut gen_sum = T::zero();
    for o in outs {
        cls_sum = cls_sum + o.cls;
        gen_sum = gen_sum + o.gen;
        merge_grads(&mut grads, o.grads);
    }
    let cls = objective.uses_cls().then(|| cls_sum / b);
    let gen = objective.uses_gen().then(|| gen_sum / ntok);
    let mut out = BatchLoss {
        cls,
        gen,
        penalty: None,
        total: T::zero(),
        grads,
    };
    out.total = match objective {
        Objective::Cls => cls_sum / b,
        Objective::Gen => gen_sum / ntok,
        Objective::Hard { lambda } => hard_total(lambda, cls_sum / b, gen_sum / ntok),
        Objective::Soft { lambda, sharing_coeff } => {
            let coeff = T::lit(sharing_coeff);
            let (pen, pgrads) = penalty_pass(
                store,
                &models.cls.encoder_prefix(),
                &models.gen.encoder_prefix(),
                coeff,
                opts.grads,
            )?;
            merge_grads(&mut out.grads, pgrads);
            out.penalty = Some(pen);
            hard_total(lambda, cls_sum / b, gen_sum / ntok) + coeff * pen
        }
    };
    Ok(out)
}

fn hard_total<T: Scalar>(lambda: f64, cls: T, gen: T) -> T {
    T::lit(1.0 - lambda) * cls + T::lit(lambda) * gen
}

/// Penalty value and `coeff`-scaled gradients for the encoder parameters
/// under `a` against their counterparts under `b`.
fn penalty_pass<T: Scalar>(
    store: &ParamStore<T>,
    a: &str,
    b: &str,
    coeff: T,
    grads: bool,
) -> Result<(T, GradMap<T>), ModelError> {
    let mut tape = Tape::new();
    let mut acc = None;
    for id in store.ids_with_prefix(a) {
        let name = store.name(id);
        let other = store.id(&format!("{b}{}", &name[a.len()..]))?;
        let x = tape.param(store, id);
        let y = tape.param(store, other);
        let d = tape.sub(x, y)?;
        let s = tape.sum_squares(d);
        acc = Some(match acc {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    let Some(total) = acc else {
        return Ok((T::zero(), GradMap::new()));
    };
    let norm = tape.sqrt(total);
    let g = if grads {
        tape.backward(norm, coeff)?
    } else {
        GradMap::new()
    };
    Ok((tape.scalar(norm), g))
}

/// Euclidean distance between two parameter sets with identical names and
/// shapes, taken jointly over all their values.
pub fn sharing_penalty<T: Scalar>(a: &ParamStore<T>, b: &ParamStore<T>) -> Result<T, ModelError> {
    if a.len() != b.len() {
        return Err(NnError::ShapeMismatch {
            op: "sharing_penalty",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        }
        .into());
    }
    let mut total = T::zero();
    for ((_, na, ta), (_, nb, tb)) in a.iter().zip(b.iter()) {
        if na != nb {
            return Err(NnError::UnknownParam(nb.to_string()).into());
        }
        if ta.shape() != tb.shape() {
            return Err(NnError::ShapeMismatch {
                op: "sharing_penalty",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            }
            .into());
        }
        let s: T = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        total = total + s;
    }
    Ok(total.sqrt())
}

/// Copy of the encoder parameters of the model under `prefix`, with the
/// prefix stripped so two models' subsets compare by name.
pub fn encoder_subset<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Result<ParamStore<T>, ModelError> {
    let scope = format!("{prefix}{ENCODER_SCOPE}");
    Ok(store.subset(|n| n.starts_with(&scope), |n| n[prefix.len()..].to_string())?)
}

fn value<T: Scalar>(
    store: &ParamStore<T>,
    models: &Models,
    objective: Objective,
    batch: &[&PairedSample],
) -> Result<T, ModelError> {
    Ok(batch_loss(store, models, objective, batch, PassOptions::default())?.total)
}

pub fn cls_loss<T: Scalar>(store: &ParamStore<T>, model: &RankerModel, batch: &[&PairedSample]) -> Result<T, ModelError> {
    value(store, &Models::shared(model.clone()), Objective::Cls, batch)
}

pub fn gen_loss<T: Scalar>(store: &ParamStore<T>, model: &RankerModel, batch: &[&PairedSample]) -> Result<T, ModelError> {
    value(store, &Models::shared(model.clone()), Objective::Gen, batch)
}

pub fn combined_loss_hard<T: Scalar>(
    store: &ParamStore<T>,
    model: &RankerModel,
    batch: &[&PairedSample],
    lambda: f64,
) -> Result<T, ModelError> {
    value(store, &Models::shared(model.clone()), Objective::Hard { lambda }, batch)
}

/// `cls_model` supplies the classification loss and `gen_model` the
/// generation loss; both live in `store` under different prefixes.
pub fn combined_loss_soft<T: Scalar>(
    store: &ParamStore<T>,
    cls_model: &RankerModel,
    gen_model: &RankerModel,
    batch: &[&PairedSample],
    lambda: f64,
    sharing_coeff: f64,
) -> Result<T, ModelError> {
    let models = Models {
        cls: cls_model.clone(),
        gen: gen_model.clone(),
    };
    value(store, &models, Objective::Soft { lambda, sharing_coeff }, batch)
}
