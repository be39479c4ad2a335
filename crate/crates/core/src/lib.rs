//! Execution-feedback code ranking.
//!
//! The pipeline executes candidate programs against stdin/stdout unit
//! tests ([`sandbox`]), renders templated execution feedback
//! ([`feedback`]), assembles (description, source, outcome, feedback)
//! training samples ([`dataset`]), trains a small multi-task transformer
//! ranker ([`model`], built on [`nn`]) and scores candidates with Pass@k
//! ([`eval`]). Ranking consumes only descriptions and sources; no code is
//! executed at ranking time.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to 64-bit floats, the default everywhere in the pipeline.

pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod feedback;
pub mod model;
pub mod nn;
pub mod sandbox;
pub mod scalar;

pub use scalar::Scalar;

pub type Tensor64 = nn::Tensor<f64>;
pub type ParamStore64 = nn::ParamStore<f64>;
pub type Ranker64 = model::Ranker<f64>;

pub type Tensor32 = nn::Tensor<f32>;
pub type ParamStore32 = nn::ParamStore<f32>;
pub type Ranker32 = model::Ranker<f32>;
