use std::fs;
use std::path::{Path, PathBuf};

use rankef_core::dataset::Split;
use rankef_core::model::{stable_hash, ModelConfig, TrainOptions, TrainStrategy};
use rankef_core::sandbox::ExecLimits;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub problems: PathBuf,
    pub candidates: PathBuf,
    /// Execution records written by `exec`, the ground truth for `eval`.
    pub outcomes: PathBuf,
    /// Directory holding `ranksamples.jsonl`, `vocab.json`, `splits.json`.
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub ranked: PathBuf,
    /// Directory for `report.json`, `report.txt` and `gradcheck.json`.
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            problems: "problems.jsonl".into(),
            candidates: "candidates.jsonl".into(),
            outcomes: "out/outcomes.jsonl".into(),
            dataset: "out/dataset".into(),
            checkpoint: "out/checkpoint".into(),
            ranked: "out/ranked.jsonl".into(),
            reports: "out/reports".into(),
        }
    }
}

impl Paths {
    /// Points every output under `dir`, keeping the inputs.
    pub fn set_out_dir(&mut self, dir: &Path) {
        self.outcomes = dir.join("outcomes.jsonl");
        self.dataset = dir.join("dataset");
        self.checkpoint = dir.join("checkpoint");
        self.ranked = dir.join("ranked.jsonl");
        self.reports = dir.join("reports");
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetOptions {
    pub max_vocab: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            max_vocab: rankef_core::dataset::DEFAULT_MAX_VOCAB,
            val_fraction: 0.1,
            test_fraction: 0.2,
        }
    }
}

/// Which problems `rank` and `eval` cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSel {
    All,
    Train,
    Val,
    Test,
}

impl SplitSel {
    pub fn only(self) -> Option<Split> {
        match self {
            SplitSel::All => None,
            SplitSel::Train => Some(Split::Train),
            SplitSel::Val => Some(Split::Val),
            SplitSel::Test => Some(Split::Test),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

/// Settings for `gradcheck`, which always runs in 64-bit floats on a small
/// model built from `model` with the sizes below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckOptions {
    pub tolerance: f64,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub batch_size: usize,
    pub max_coords: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            tolerance: 1e-4,
            d_model: 8,
            n_heads: 2,
            n_layers: 2,
            ffn_dim: 12,
            vocab_size: 16,
            batch_size: 3,
            max_coords: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub exec: ExecLimits,
    pub dataset: DatasetOptions,
    pub model: ModelConfig,
    pub strategy: TrainStrategy,
    /// `train.seed` is overwritten by the top-level `seed`.
    pub train: TrainOptions,
    pub seed: u64,
    pub dtype: Dtype,
    pub ks: Vec<usize>,
    pub solved_only: bool,
    pub split: SplitSel,
    /// Score candidates by their true outcome instead of a checkpoint.
    pub oracle_scores: bool,
    pub gradcheck: GradcheckOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            paths: Paths::default(),
            exec: ExecLimits::default(),
            dataset: DatasetOptions::default(),
            model: ModelConfig::default(),
            strategy: TrainStrategy::default(),
            train: TrainOptions::default(),
            seed: 7,
            dtype: Dtype::F64,
            ks: rankef_core::eval::DEFAULT_KS.to_vec(),
            solved_only: false,
            split: SplitSel::Test,
            oracle_scores: false,
            gradcheck: GradcheckOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        self.exec.validate()?;
        self.strategy
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        if self.ks.is_empty() || self.ks.contains(&0) {
            return bad(format!("ks must be non-empty and positive, got {:?}", self.ks));
        }
        let d = &self.dataset;
        if !(0.0..1.0).contains(&d.val_fraction)
            || !(0.0..1.0).contains(&d.test_fraction)
            || d.val_fraction + d.test_fraction >= 1.0
        {
            return bad(format!(
                "split fractions must be in [0, 1) and sum below 1, got val {} test {}",
                d.val_fraction, d.test_fraction
            ));
        }
        if self.train.batch_size == 0 || self.train.workers == 0 {
            return bad("train.batch_size and train.workers must be >= 1".into());
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return bad(format!("train.lr must be positive, got {}", self.train.lr));
        }
        if !(self.gradcheck.tolerance > 0.0) {
            return bad("gradcheck.tolerance must be positive".into());
        }
        Ok(())
    }

    /// Hash of everything that can change a result. Paths and worker
    /// counts are left out, so moving outputs or adding threads keeps the
    /// hash stable.
    pub fn hash(&self) -> String {
        let mut view = serde_json::to_value(self).expect("config serializes");
        let obj = view.as_object_mut().expect("config is an object");
        obj.remove("paths");
        for section in ["exec", "train"] {
            if let Some(s) = obj.get_mut(section).and_then(|v| v.as_object_mut()) {
                s.remove("workers");
                s.remove("seed");
            }
        }
        stable_hash(&view)
    }
}

pub(crate) fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{what} not found: {}", path.display())))
    }
}

pub(crate) fn require_dir(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{what} not found: {}", path.display())))
    }
}
