use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rankef_core::corpus::{
    read_candidates, read_jsonl, read_problems, validate_corpus, write_jsonl, Candidate,
    ExecutionRecord, OutcomeClass, Problem, RankSample, ScoredCandidate,
};
use rankef_core::dataset::{
    build_rank_samples, build_vocab, dedup_candidates, encode_pair, split_problems, PairedSample,
    Split, Vocabulary, RESERVED,
};
use rankef_core::eval::{
    evaluate, rank_all, render_report, score_candidates, truth_from_records, EvalReport,
    RankedList, Truth,
};
use rankef_core::model::{
    batch_loss, save_model, train, CheckpointMeta, ModelConfig, Models, Objective, PassOptions,
    Ranker, RankerModel, TrainLogEntry, TrainStrategy,
};
use rankef_core::nn::checkpoint::read_manifest;
use rankef_core::nn::{grad_check, GradCheckConfig, ParamStore};
use rankef_core::sandbox::{batch_execute, Interpreter};
use rankef_core::Scalar;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::config::{require_dir, require_file, Dtype, RunConfig};
use crate::error::CliError;

pub const SAMPLES_FILE: &str = "ranksamples.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const DATASET_META_FILE: &str = "meta.json";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const GRADCHECK_JSON: &str = "gradcheck.json";

/// Provenance written next to every JSONL output as `<file>.meta.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputMeta {
    pub command: String,
    pub config_hash: String,
    pub records: usize,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))
        }
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).expect("outputs serialize");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path.display(), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T, CliError> {
    require_file(path, what)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn write_records<T: Serialize>(
    path: &Path,
    rows: &[T],
    command: &str,
    cfg: &RunConfig,
) -> Result<(), CliError> {
    ensure_parent(path)?;
    write_jsonl(path, rows)?;
    write_json(
        &meta_path(path),
        &OutputMeta {
            command: command.into(),
            config_hash: cfg.hash(),
            records: rows.len(),
        },
    )
}

fn load_corpus(cfg: &RunConfig) -> Result<(Vec<Problem>, Vec<Candidate>), CliError> {
    require_file(&cfg.paths.problems, "problems file")?;
    require_file(&cfg.paths.candidates, "candidates file")?;
    let problems = read_problems(&cfg.paths.problems)?;
    let candidates = read_candidates(&cfg.paths.candidates)?;
    let report = validate_corpus(&problems, &candidates);
    if !report.is_ok() {
        return Err(CliError::Validation(format!("corpus is invalid:\n{report}")));
    }
    Ok((problems, candidates))
}

fn load_outcomes(cfg: &RunConfig) -> Result<Vec<ExecutionRecord>, CliError> {
    require_file(&cfg.paths.outcomes, "outcomes file (run `exec` first)")?;
    Ok(read_jsonl(&cfg.paths.outcomes)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExecSummary {
    pub records: usize,
    pub by_outcome: BTreeMap<OutcomeClass, usize>,
}

impl fmt::Display for ExecSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "executed {} candidates:", self.records)?;
        for (o, n) in &self.by_outcome {
            write!(f, " {o}={n}")?;
        }
        Ok(())
    }
}

/// Runs every candidate against its tests and writes the execution records.
pub fn cmd_exec(cfg: &RunConfig) -> Result<ExecSummary, CliError> {
    cfg.validate()?;
    let (problems, candidates) = load_corpus(cfg)?;
    let interpreter = Interpreter::from_env()?;
    let records = batch_execute(&interpreter, &problems, &candidates, &cfg.exec)?;
    write_records(&cfg.paths.outcomes, &records, "exec", cfg)?;
    let mut by_outcome = BTreeMap::new();
    for r in &records {
        *by_outcome.entry(r.outcome).or_insert(0) += 1;
    }
    Ok(ExecSummary {
        records: records.len(),
        by_outcome,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config_hash: String,
    pub vocab_hash: String,
    pub vocab_size: usize,
    pub samples: usize,
    pub duplicates_dropped: usize,
    /// Sample count per split.
    pub splits: BTreeMap<Split, usize>,
}

impl fmt::Display for DatasetMeta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} samples ({} duplicates dropped), vocabulary of {}",
            self.samples, self.duplicates_dropped, self.vocab_size
        )?;
        for (s, n) in &self.splits {
            write!(f, ", {s:?}={n}")?;
        }
        Ok(())
    }
}

/// Deduplicates candidates, joins them with their execution records into
/// training quadruples, assigns problem-level splits and builds the
/// vocabulary from the train and validation splits.
pub fn cmd_build_dataset(cfg: &RunConfig) -> Result<DatasetMeta, CliError> {
    cfg.validate()?;
    let (problems, candidates) = load_corpus(cfg)?;
    let records = load_outcomes(cfg)?;
    let unique = dedup_candidates(&candidates);
    let samples = build_rank_samples(&problems, &unique, &records)?;

    let ids: Vec<&str> = problems.iter().map(|p| p.problem_id.as_str()).collect();
    let d = &cfg.dataset;
    let splits = split_problems(&ids, cfg.seed, d.val_fraction, d.test_fraction);
    let seen: Vec<RankSample> = samples
        .iter()
        .filter(|s| splits[&s.problem_id] != Split::Test)
        .cloned()
        .collect();
    let vocab = build_vocab(&seen, d.max_vocab)?;

    let dir = &cfg.paths.dataset;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    write_jsonl(&dir.join(SAMPLES_FILE), &samples)?;
    fs::write(dir.join(VOCAB_FILE), vocab.to_json() + "\n")
        .map_err(|e| CliError::io(dir.display(), e))?;
    write_json(&dir.join(SPLITS_FILE), &splits)?;

    let mut per_split = BTreeMap::new();
    for s in &samples {
        *per_split.entry(splits[&s.problem_id]).or_insert(0) += 1;
    }
    let meta = DatasetMeta {
        config_hash: cfg.hash(),
        vocab_hash: vocab.hash(),
        vocab_size: vocab.len(),
        samples: samples.len(),
        duplicates_dropped: candidates.len() - unique.len(),
        splits: per_split,
    };
    write_json(&dir.join(DATASET_META_FILE), &meta)?;
    Ok(meta)
}

/// Samples, vocabulary and split assignment produced by `build-dataset`.
pub struct Dataset {
    pub samples: Vec<RankSample>,
    pub vocab: Vocabulary,
    pub splits: BTreeMap<String, Split>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        require_dir(dir, "dataset directory (run `build-dataset` first)")?;
        require_file(&dir.join(SAMPLES_FILE), "dataset samples")?;
        let samples = read_jsonl(&dir.join(SAMPLES_FILE))?;
        Ok(Dataset {
            samples,
            vocab: load_vocab(dir)?,
            splits: read_json(&dir.join(SPLITS_FILE), "split assignment")?,
        })
    }

    pub fn encoded(&self, split: Split, model: &ModelConfig) -> Vec<PairedSample> {
        self.samples
            .iter()
            .filter(|s| self.splits.get(&s.problem_id) == Some(&split))
            .map(|s| encode_pair(s, &self.vocab, model.seq_limits()))
            .collect()
    }
}

pub fn load_vocab(dir: &Path) -> Result<Vocabulary, CliError> {
    let path = dir.join(VOCAB_FILE);
    require_file(&path, "vocabulary")?;
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(path.display(), e))?;
    Ok(Vocabulary::from_json(&text)?)
}

/// Model configuration with the vocabulary size filled in.
pub fn resolved_model(cfg: &RunConfig, vocab: &Vocabulary) -> Result<ModelConfig, CliError> {
    let mut model = cfg.model.clone();
    if model.vocab_size == 0 {
        model.vocab_size = vocab.len();
    } else if model.vocab_size != vocab.len() {
        return Err(CliError::Validation(format!(
            "model.vocab_size is {} but the dataset vocabulary has {} tokens",
            model.vocab_size,
            vocab.len()
        )));
    }
    model.validate()?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub strategy: String,
    pub steps: usize,
    pub best_step: usize,
    pub best_val_accuracy: Option<f64>,
    pub first_total: f64,
    pub last_total: f64,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} training: {} steps, loss {:.4} -> {:.4}, kept step {}",
            self.strategy, self.steps, self.first_total, self.last_total, self.best_step
        )?;
        if let Some(a) = self.best_val_accuracy {
            write!(f, " (val accuracy {a:.3})")?;
        }
        Ok(())
    }
}

/// Trains a ranker with the configured strategy and saves the checkpoint
/// with the best validation accuracy, plus the per-step log.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    match cfg.dtype {
        Dtype::F32 => train_as::<f32>(cfg),
        Dtype::F64 => train_as::<f64>(cfg),
    }
}

fn train_as<T: Scalar>(cfg: &RunConfig) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let data = Dataset::load(&cfg.paths.dataset)?;
    let model = resolved_model(cfg, &data.vocab)?;
    let train_set = data.encoded(Split::Train, &model);
    let val_set = data.encoded(Split::Val, &model);
    let opts = cfg.train_options();
    let result = train::<T>(&model, &cfg.strategy, &opts, &train_set, &val_set)?;

    let meta = CheckpointMeta {
        model_config: model,
        strategy: cfg.strategy.clone(),
        best_step: result.best_step,
        best_val_accuracy: result.best_val_accuracy,
        extra: serde_json::json!({
            "seed": cfg.seed,
            "train_samples": train_set.len(),
            "val_samples": val_set.len(),
        }),
    };
    let dir = &cfg.paths.checkpoint;
    save_model(dir, &result.best, &meta, &cfg.hash(), &data.vocab)?;
    write_records(&dir.join(TRAIN_LOG_FILE), &result.log, "train", cfg)?;

    let totals: Vec<f64> = result.log.iter().map(|e: &TrainLogEntry| e.total).collect();
    Ok(TrainSummary {
        strategy: cfg.strategy.name().to_string(),
        steps: result.log.len(),
        best_step: result.best_step,
        best_val_accuracy: result.best_val_accuracy,
        first_total: totals.first().copied().unwrap_or(f64::NAN),
        last_total: totals.last().copied().unwrap_or(f64::NAN),
    })
}

/// Candidates in the problems that `split` selects, with the split taken
/// from the dataset directory.
fn select<'a>(
    cfg: &RunConfig,
    problems: &'a [Problem],
    candidates: &'a [Candidate],
) -> Result<(Vec<Problem>, Vec<Candidate>), CliError> {
    let Some(only) = cfg.split.only() else {
        return Ok((problems.to_vec(), candidates.to_vec()));
    };
    let splits: BTreeMap<String, Split> =
        read_json(&cfg.paths.dataset.join(SPLITS_FILE), "split assignment")?;
    let keep = |pid: &str| splits.get(pid) == Some(&only);
    Ok((
        problems.iter().filter(|p| keep(&p.problem_id)).cloned().collect(),
        candidates.iter().filter(|c| keep(&c.problem_id)).cloned().collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RankSummary {
    pub problems: usize,
    pub candidates: usize,
}

impl fmt::Display for RankSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ranked {} candidates across {} problems",
            self.candidates, self.problems
        )
    }
}

/// Scores and ranks candidates from description and source alone. Nothing
/// is executed.
pub fn cmd_rank(cfg: &RunConfig) -> Result<RankSummary, CliError> {
    cfg.validate()?;
    require_dir(&cfg.paths.checkpoint, "checkpoint directory")?;
    let dtype = read_manifest(&cfg.paths.checkpoint)?.dtype;
    match dtype.as_str() {
        "f32" => rank_as::<f32>(cfg),
        "f64" => rank_as::<f64>(cfg),
        other => Err(CliError::Validation(format!("unsupported checkpoint dtype {other:?}"))),
    }
}

fn rank_as<T: Scalar>(cfg: &RunConfig) -> Result<RankSummary, CliError> {
    let vocab = load_vocab(&cfg.paths.dataset)?;
    let ranker = Ranker::<T>::load(&cfg.paths.checkpoint, vocab)?;
    let (problems, candidates) = load_corpus(cfg)?;
    let (problems, candidates) = select(cfg, &problems, &candidates)?;
    let scores = score_candidates(&ranker, &problems, &candidates, cfg.exec.workers)?;
    let ranked = rank_all(&scores)?;
    write_records(&cfg.paths.ranked, &ranked, "rank", cfg)?;
    Ok(RankSummary {
        problems: ranked.len(),
        candidates: scores.len(),
    })
}

/// Ranked lists that put every correct candidate first, for checking the
/// metric plumbing against its upper bound.
pub fn oracle_ranking(truth: &Truth, candidates: &[Candidate]) -> Result<Vec<RankedList>, CliError> {
    let scores: Vec<ScoredCandidate> = candidates
        .iter()
        .map(|c| {
            let outcome = truth
                .get(&c.problem_id)
                .and_then(|m| m.get(&c.candidate_id))
                .ok_or_else(|| {
                    CliError::Validation(format!(
                        "no outcome for candidate ({:?}, {})",
                        c.problem_id, c.candidate_id
                    ))
                })?;
            Ok(ScoredCandidate {
                problem_id: c.problem_id.clone(),
                candidate_id: c.candidate_id,
                score: if *outcome == OutcomeClass::Correct { 1.0 } else { 0.0 },
            })
        })
        .collect::<Result<_, CliError>>()?;
    Ok(rank_all(&scores)?)
}

/// Computes random and ranked Pass@k and writes `report.json` and
/// `report.txt`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport, CliError> {
    cfg.validate()?;
    let (problems, candidates) = load_corpus(cfg)?;
    let truth = truth_from_records(&load_outcomes(cfg)?);
    let ranked = if cfg.oracle_scores {
        let (_, selected) = select(cfg, &problems, &candidates)?;
        oracle_ranking(&truth, &selected)?
    } else {
        require_file(&cfg.paths.ranked, "ranked candidates (run `rank` first)")?;
        read_jsonl::<RankedList>(&cfg.paths.ranked)?
    };
    let difficulty: BTreeMap<String, _> = problems
        .iter()
        .filter_map(|p| p.difficulty.map(|d| (p.problem_id.clone(), d)))
        .collect();
    let mut report = evaluate(
        &ranked,
        &truth,
        &cfg.ks,
        cfg.solved_only,
        (!difficulty.is_empty()).then_some(&difficulty),
    )?;
    report.config_hash = Some(cfg.hash());
    let dir = &cfg.paths.reports;
    write_json(&dir.join(REPORT_JSON), &report)?;
    fs::write(dir.join(REPORT_TXT), render_report(&report))
        .map_err(|e| CliError::io(dir.display(), e))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCheck {
    pub loss: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub worst: Option<(String, usize)>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckSummary {
    pub config_hash: String,
    pub tolerance: f64,
    pub checks: Vec<LossCheck>,
    pub passed: bool,
}

impl fmt::Display for GradcheckSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<6} max rel err {:.3e} over {} coords  {}",
                c.loss,
                c.max_rel_err,
                c.coords_checked,
                if c.passed { "ok" } else { "FAILED" }
            )?;
        }
        write!(f, "tolerance {:.0e}: {}", self.tolerance, if self.passed { "pass" } else { "fail" })
    }
}

fn toy_model(cfg: &RunConfig) -> ModelConfig {
    let g = &cfg.gradcheck;
    ModelConfig {
        d_model: g.d_model,
        n_heads: g.n_heads,
        n_encoder_layers: g.n_layers,
        n_decoder_layers: g.n_layers,
        ffn_dim: g.ffn_dim,
        vocab_size: g.vocab_size,
        max_seq_len: 12,
        max_target_len: 6,
        dropout: 0.0,
        ..cfg.model.clone()
    }
}

fn toy_batch(model: &ModelConfig, n: usize, seed: u64) -> Result<Vec<PairedSample>, CliError> {
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend((RESERVED.len()..model.vocab_size).map(|i| format!("w{i}")));
    let vocab = Vocabulary::from_tokens(tokens.clone())?;
    let words = &tokens[RESERVED.len()..];
    let mut rng = StdRng::seed_from_u64(seed);
    let mut text = |len: usize| {
        (0..len)
            .map(|_| words[rng.random_range(0..words.len())].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    };
    let samples: Vec<RankSample> = (0..n)
        .map(|i| RankSample {
            problem_id: "toy".into(),
            candidate_id: i as u64,
            description: text(1),
            source: text(1 + i % 4),
            label: OutcomeClass::ALL[i % OutcomeClass::ALL.len()],
            feedback: text(1 + i % 3),
        })
        .collect();
    Ok(samples
        .iter()
        .map(|s| encode_pair(s, &vocab, model.seq_limits()))
        .collect())
}

/// Checks the analytic gradients of every loss variant against finite
/// differences on a small seeded model and batch, in 64-bit floats.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<GradcheckSummary, CliError> {
    cfg.validate()?;
    let model = toy_model(cfg);
    model.validate()?;
    let data = toy_batch(&model, cfg.gradcheck.batch_size.max(1), cfg.seed)?;
    let batch: Vec<&PairedSample> = data.iter().collect();

    let mut shared = ParamStore::<f64>::new();
    let m = RankerModel::init(&mut shared, &model, "", cfg.seed)?;
    let hard = Models::shared(m);
    // Distinct seeds: the penalty is not differentiable where the two
    // encoders coincide.
    let mut pair = ParamStore::<f64>::new();
    let soft = Models {
        cls: RankerModel::init(&mut pair, &model, "m1.", cfg.seed)?,
        gen: RankerModel::init(&mut pair, &model, "m2.", cfg.seed.wrapping_add(1))?,
    };
    let lambda = model.lambda_weight;
    let sharing_coeff = match cfg.strategy {
        TrainStrategy::Soft { sharing_coeff } => sharing_coeff,
        _ => 1.0,
    };
    let cases = [
        ("cls", Objective::Cls, &shared, &hard),
        ("gen", Objective::Gen, &shared, &hard),
        ("hard", Objective::Hard { lambda }, &shared, &hard),
        ("soft", Objective::Soft { lambda, sharing_coeff }, &pair, &soft),
    ];

    let gc = GradCheckConfig {
        max_coords: cfg.gradcheck.max_coords,
        seed: cfg.seed,
        ..GradCheckConfig::five_point()
    };
    let mut checks = Vec::new();
    for (name, objective, store, models) in cases {
        let opts = PassOptions {
            grads: true,
            ..PassOptions::default()
        };
        let analytic = batch_loss(store, models, objective, &batch, opts)?.grads;
        let report = grad_check(
            store,
            &analytic,
            |s| {
                batch_loss(s, models, objective, &batch, PassOptions::default())
                    .map(|l| l.total)
                    .unwrap_or(f64::NAN)
            },
            gc,
        );
        checks.push(LossCheck {
            loss: name.into(),
            max_rel_err: report.max_rel_err,
            coords_checked: report.coords_checked,
            worst: report.worst,
            passed: report.max_rel_err < cfg.gradcheck.tolerance,
        });
    }
    let summary = GradcheckSummary {
        config_hash: cfg.hash(),
        tolerance: cfg.gradcheck.tolerance,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    write_json(&cfg.paths.reports.join(GRADCHECK_JSON), &summary)?;
    Ok(summary)
}
