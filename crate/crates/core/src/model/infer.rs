use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::OutcomeClass;
use crate::dataset::{encode_input, Variant, Vocabulary, BOS_ID, EOS_ID};
use crate::nn::{load_checkpoint, save_checkpoint, Manifest, ParamStore};
use crate::scalar::Scalar;

use super::ranker::{Forward, Models, RankerModel};
use super::train::{argmax, class_logits};
use super::{ModelConfig, ModelError, TrainStrategy};

/// Anything that can score a candidate from its problem description and
/// source alone.
pub trait CandidateScorer: Sync {
    /// Probability-like score; higher ranks first.
    fn score(&self, description: &str, source: &str) -> Result<f64, ModelError>;
}

/// Training metadata stored in the checkpoint manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model_config: ModelConfig,
    pub strategy: TrainStrategy,
    pub best_step: usize,
    pub best_val_accuracy: Option<f64>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl CheckpointMeta {
    pub fn prefixes(&self) -> (&'static str, &'static str) {
        match self.strategy {
            TrainStrategy::Soft { .. } => ("m1.", "m2."),
            _ => ("", ""),
        }
    }
}

pub fn save_model<T: Scalar>(
    dir: &Path,
    store: &ParamStore<T>,
    meta: &CheckpointMeta,
    config_hash: &str,
    vocab: &Vocabulary,
) -> Result<Manifest, ModelError> {
    let metadata = serde_json::to_value(meta).map_err(|e| ModelError::Metadata(e.to_string()))?;
    Ok(save_checkpoint(dir, store, config_hash, &vocab.hash(), metadata)?)
}

/// A loaded checkpoint ready for scoring and feedback generation.
#[derive(Debug, Clone)]
pub struct Ranker<T: Scalar> {
    pub store: ParamStore<T>,
    pub models: Models,
    pub vocab: Vocabulary,
    pub manifest: Option<Manifest>,
}

impl<T: Scalar> Ranker<T> {
    pub fn new(store: ParamStore<T>, models: Models, vocab: Vocabulary) -> Self {
        Ranker {
            store,
            models,
            vocab,
            manifest: None,
        }
    }

    /// Loads the checkpoint in `dir`, refusing it when it was trained with a
    /// different vocabulary.
    pub fn load(dir: &Path, vocab: Vocabulary) -> Result<Self, ModelError> {
        let (manifest, store) = load_checkpoint::<T>(dir)?;
        if manifest.vocab_hash != vocab.hash() {
            return Err(ModelError::VocabMismatch {
                checkpoint: manifest.vocab_hash.clone(),
                corpus: vocab.hash(),
            });
        }
        let meta: CheckpointMeta = serde_json::from_value(manifest.metadata.clone())
            .map_err(|e| ModelError::Metadata(e.to_string()))?;
        let (pc, pg) = meta.prefixes();
        let models = Models {
            cls: RankerModel::bind(&store, &meta.model_config, pc)?,
            gen: RankerModel::bind(&store, &meta.model_config, pg)?,
        };
        Ok(Ranker {
            store,
            models,
            vocab,
            manifest: Some(manifest),
        })
    }

    fn config(&self) -> &ModelConfig {
        &self.models.cls.config
    }

    fn input(&self, variant: Variant, description: &str, source: &str) -> Vec<u32> {
        encode_input(
            variant,
            &self.vocab.ids(description),
            &self.vocab.ids(source),
            self.config().max_seq_len,
        )
    }

    /// Softmax over the class logits, in label order.
    pub fn class_probs(&self, description: &str, source: &str) -> Result<Vec<f64>, ModelError> {
        let ids = self.input(Variant::Cls, description, source);
        let logits: Vec<f64> = class_logits(&self.store, &self.models.cls, &ids)?
            .into_iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        Ok(exp.into_iter().map(|e| e / z).collect())
    }

    /// Most likely outcome class under the classification head.
    pub fn predict(&self, description: &str, source: &str) -> Result<OutcomeClass, ModelError> {
        let p = self.class_probs(description, source)?;
        let idx = argmax(&p);
        Ok(match (self.config().n_classes, idx) {
            (_, 0) => OutcomeClass::Correct,
            (2, _) | (_, 1) => OutcomeClass::IntentError,
            _ => OutcomeClass::ExecutionError,
        })
    }

    /// Greedy decoding from `[BOS]` until `[EOS]` or `max_target_len`
    /// tokens; ties go to the lowest token id.
    pub fn generate_feedback(&self, description: &str, source: &str, max_target_len: usize) -> Result<String, ModelError> {
        let model = &self.models.gen;
        let limit = max_target_len.min(model.config.max_target_len);
        let ids = self.input(Variant::Gen, description, source);
        let mut f = Forward::new(&self.store, None);
        let mem = f.encode(model, &ids)?;
        let mut out = vec![BOS_ID];
        let v = model.config.vocab_size;
        while out.len() < limit {
            let logits = f.decode(model, mem, &out)?;
            let vals = f.tape.value(logits);
            let next = argmax(&vals[vals.len() - v..]) as u32;
            if next == EOS_ID {
                break;
            }
            out.push(next);
        }
        Ok(self.vocab.detokenize(&out[1..]))
    }
}

impl<T: Scalar> CandidateScorer for Ranker<T> {
    fn score(&self, description: &str, source: &str) -> Result<f64, ModelError> {
        Ok(self.class_probs(description, source)?[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::RESERVED;

    fn vocab() -> Vocabulary {
        let mut toks: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        toks.extend(["x", "y", "print", "(", ")", "code", "correct"].map(String::from));
        Vocabulary::from_tokens(toks).unwrap()
    }

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_encoder_layers: 1,
            n_decoder_layers: 1,
            ffn_dim: 8,
            max_seq_len: 16,
            max_target_len: 5,
            vocab_size: 15,
            ..ModelConfig::default()
        }
    }

    fn ranker() -> Ranker<f64> {
        let mut s = ParamStore::new();
        let m = RankerModel::init(&mut s, &cfg(), "", 3).unwrap();
        Ranker::new(s, Models::shared(m), vocab())
    }

    #[test]
    fn scores_are_probabilities_and_deterministic() {
        let r = ranker();
        let p = r.class_probs("x y", "print ( x )").unwrap();
        assert_eq!(p.len(), 3);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let s = r.score("x y", "print ( x )").unwrap();
        assert!((0.0..=1.0).contains(&s));
        assert_eq!(s, r.score("x y", "print ( x )").unwrap());
    }

    #[test]
    fn forced_logits_give_near_certain_score() {
        let mut r = ranker();
        let id = r.store.id("cls.fc2.b").unwrap();
        r.store.get_mut(id).data_mut().copy_from_slice(&[10.0, -10.0, -10.0]);
        let w = r.store.id("cls.fc2.w").unwrap();
        r.store.get_mut(w).data_mut().fill(0.0);
        assert!(r.score("x", "y").unwrap() > 0.999);
        assert_eq!(r.predict("x", "y").unwrap(), OutcomeClass::Correct);
    }

    #[test]
    fn eos_first_gives_empty_feedback() {
        let mut r = ranker();
        let w = r.store.id("dec.out.w").unwrap();
        r.store.get_mut(w).data_mut().fill(0.0);
        let b = r.store.id("dec.out.b").unwrap();
        r.store.get_mut(b).data_mut()[EOS_ID as usize] = 5.0;
        assert_eq!(r.generate_feedback("x", "y", 5).unwrap(), "");
    }

    #[test]
    fn decoding_is_bounded_and_tie_breaks_low() {
        let mut r = ranker();
        let w = r.store.id("dec.out.w").unwrap();
        r.store.get_mut(w).data_mut().fill(0.0);
        // every logit equal: the lowest id ([PAD]) wins, and detokenizing
        // drops reserved tokens
        assert_eq!(r.generate_feedback("x", "y", 5).unwrap(), "");
        let b = r.store.id("dec.out.b").unwrap();
        r.store.get_mut(b).data_mut()[8] = 1.0;
        r.store.get_mut(b).data_mut()[9] = 1.0;
        assert_eq!(r.generate_feedback("x", "y", 5).unwrap(), "x x x x");
    }

    #[test]
    fn checkpoint_roundtrip_and_vocab_guard() {
        let r = ranker();
        let dir = tempfile::tempdir().unwrap();
        let meta = CheckpointMeta {
            model_config: cfg(),
            strategy: TrainStrategy::Hard,
            best_step: 0,
            best_val_accuracy: None,
            extra: serde_json::Value::Null,
        };
        save_model(dir.path(), &r.store, &meta, "h", &r.vocab).unwrap();
        let back = Ranker::<f64>::load(dir.path(), vocab()).unwrap();
        assert_eq!(back.score("x", "y").unwrap(), r.score("x", "y").unwrap());
        let mut other: Vec<String> = vocab().tokens().to_vec();
        other.push("z".into());
        let err = Ranker::<f64>::load(dir.path(), Vocabulary::from_tokens(other).unwrap()).unwrap_err();
        assert!(matches!(err, ModelError::VocabMismatch { .. }));
    }
}
