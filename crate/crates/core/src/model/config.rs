use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{SeqLimits, DEFAULT_MAX_SEQ_LEN, DEFAULT_MAX_TARGET_LEN};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub ffn_dim: usize,
    /// 3 for correct / intent error / execution error, 2 for
    /// correct / incorrect.
    pub n_classes: usize,
    /// Weight of the generation loss in the combined objective.
    pub lambda_weight: f64,
    pub max_seq_len: usize,
    pub max_target_len: usize,
    pub dropout: f64,
    /// Set from the vocabulary when training starts.
    pub vocab_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 2,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            ffn_dim: 128,
            n_classes: 3,
            lambda_weight: 0.9,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            max_target_len: DEFAULT_MAX_TARGET_LEN,
            dropout: 0.0,
            vocab_size: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_weight) {
            return bad(format!("lambda_weight {} is outside [0, 1]", self.lambda_weight));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} is outside [0, 1)", self.dropout));
        }
        if self.n_classes != 2 && self.n_classes != 3 {
            return bad(format!("n_classes must be 2 or 3 (got {})", self.n_classes));
        }
        if self.ffn_dim == 0 {
            return bad("ffn_dim must be positive".into());
        }
        if self.max_seq_len < 5 || self.max_target_len < 2 {
            return bad(format!(
                "max_seq_len ({}) must be at least 5 and max_target_len ({}) at least 2",
                self.max_seq_len, self.max_target_len
            ));
        }
        if self.vocab_size < crate::dataset::RESERVED.len() {
            return bad(format!("vocab_size {} is smaller than the reserved tokens", self.vocab_size));
        }
        Ok(())
    }

    pub fn seq_limits(&self) -> SeqLimits {
        SeqLimits {
            max_seq_len: self.max_seq_len,
            max_target_len: self.max_target_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainStrategy {
    /// One model, one combined loss per batch.
    Hard,
    /// Two models whose encoders are tied by a Euclidean-norm penalty.
    Soft {
        #[serde(default = "default_sharing_coeff")]
        sharing_coeff: f64,
    },
    /// Alternating generation-only and classification-only phases.
    Inf {
        #[serde(default = "default_steps_per_phase")]
        steps_per_phase: usize,
        #[serde(default = "default_rounds")]
        rounds: usize,
    },
}

fn default_sharing_coeff() -> f64 {
    1.0
}

fn default_steps_per_phase() -> usize {
    1000
}

fn default_rounds() -> usize {
    3
}

impl Default for TrainStrategy {
    fn default() -> Self {
        TrainStrategy::Hard
    }
}

impl TrainStrategy {
    pub fn soft() -> Self {
        TrainStrategy::Soft {
            sharing_coeff: default_sharing_coeff(),
        }
    }

    pub fn inf() -> Self {
        TrainStrategy::Inf {
            steps_per_phase: default_steps_per_phase(),
            rounds: default_rounds(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainStrategy::Hard => "hard",
            TrainStrategy::Soft { .. } => "soft",
            TrainStrategy::Inf { .. } => "inf",
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            TrainStrategy::Inf {
                steps_per_phase,
                rounds,
            } if steps_per_phase == 0 || rounds == 0 => Err(ModelError::Config(format!(
                "inf needs steps_per_phase >= 1 and rounds >= 1 (got {steps_per_phase}, {rounds})"
            ))),
            TrainStrategy::Soft { sharing_coeff } if !(sharing_coeff >= 0.0) => Err(
                ModelError::Config(format!("sharing_coeff must be >= 0 (got {sharing_coeff})")),
            ),
            _ => Ok(()),
        }
    }
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn stable_hash<S: Serialize>(value: &S) -> String {
    let json = serde_json::to_vec(value).expect("serializable value");
    hex::encode(Sha256::digest(json))
}
