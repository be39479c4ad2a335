//! Dense row-major tensors, a reverse-mode tape, parameter storage, Adam,
//! finite-difference gradient checking and checkpoint I/O.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, ParamEntry};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Stencil};
pub use optim::Adam;
pub use params::{merge_grads, GradMap, Init, ParamId, ParamStore};
pub use tape::{Reduction, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("index {index} out of range for {op} with bound {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("duplicate parameter {0:?}")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}
