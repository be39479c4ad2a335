//! The ranker: a shared transformer encoder feeding a classification head
//! and a feedback decoder, its training objectives, the three training
//! strategies and checkpoint-backed scoring.

pub mod config;
pub mod infer;
pub mod loss;
pub mod ranker;
pub mod train;

use thiserror::Error;

use crate::nn::NnError;

pub use config::{stable_hash, ModelConfig, TrainStrategy};
pub use infer::{save_model, CandidateScorer, CheckpointMeta, Ranker};
pub use loss::{
    batch_loss, cls_loss, combined_loss_hard, combined_loss_soft, encoder_subset, gen_loss,
    sharing_penalty, BatchLoss, Objective, PassOptions,
};
pub use ranker::{Models, RankerModel};
pub use train::{
    init_params, train, train_with_observer, validate, Phase, PhaseEvent, TrainLogEntry, TrainOptions,
    TrainResult, Trainer,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss diverged at step {step}: {what} = {value}")]
    DivergedLoss {
        step: usize,
        what: &'static str,
        value: f64,
    },
    #[error("vocabulary mismatch: checkpoint has {checkpoint}, corpus has {corpus}")]
    VocabMismatch { checkpoint: String, corpus: String },
    #[error("checkpoint metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}
