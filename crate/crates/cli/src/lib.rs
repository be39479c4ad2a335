//! Command-line pipeline: `exec` runs candidates, `build-dataset` turns
//! execution records into training samples, `train` fits a ranker, `rank`
//! scores candidates without running them, `eval` reports Pass@k and
//! `gradcheck` verifies the loss gradients.
//!
//! Settings come from defaults, then `--config FILE`, then environment
//! variables, then flags.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rankef_core::model::TrainStrategy;

pub use commands::{
    cmd_build_dataset, cmd_eval, cmd_exec, cmd_gradcheck, cmd_rank, cmd_train, Dataset,
};
pub use config::{Dtype, RunConfig, SplitSel};
pub use error::{exit, CliError};

#[derive(Debug, Parser)]
#[command(name = "rankef", version, about = "Rank generated code by predicted execution outcome")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for splits, initialization and batching [default: 7]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Put every output (outcomes, dataset, checkpoint, ranked, reports) under DIR
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub problems: Option<PathBuf>,
    #[arg(long, global = true)]
    pub candidates: Option<PathBuf>,
    #[arg(long, global = true)]
    pub outcomes: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    pub ranked: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR")]
    pub reports: Option<PathBuf>,
    /// Worker threads for execution and scoring [default: 1]
    #[arg(long, global = true, env = "RANKEF_WORKERS")]
    pub workers: Option<usize>,
    /// Which problems `rank` and `eval` cover [default: test]
    #[arg(long, global = true, value_enum)]
    pub split: Option<SplitArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Hard,
    Soft,
    Inf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute candidates against their tests (interpreter from RANKEF_INTERPRETER, else python3)
    Exec {
        /// Wall-clock limit per test in milliseconds [default: 5000]
        #[arg(long)]
        timeout_ms: Option<u64>,
        /// Cap on captured stdout and stderr per test [default: 1048576]
        #[arg(long)]
        max_output_bytes: Option<usize>,
    },
    /// Build training samples, vocabulary and splits from execution records
    BuildDataset {
        #[arg(long)]
        max_vocab: Option<usize>,
        /// Fraction of problems held out for validation [default: 0.1]
        #[arg(long)]
        val_fraction: Option<f64>,
        /// Fraction of problems held out for testing [default: 0.2]
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Train the ranker
    Train(TrainArgs),
    /// Score and rank candidates; never executes code
    Rank,
    /// Compute random and ranked Pass@k
    Eval {
        /// Comma-separated cut-offs [default: 1,2,5]
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// Only count problems with at least one correct candidate
        #[arg(long)]
        solved_only: bool,
        /// Rank by the true outcomes instead of a checkpoint (upper bound)
        #[arg(long)]
        oracle_scores: bool,
    },
    /// Compare analytic loss gradients with finite differences (64-bit)
    Gradcheck {
        /// Largest accepted relative error [default: 1e-4]
        #[arg(long)]
        tolerance: Option<f64>,
        /// Coordinates sampled per loss [default: 400]
        #[arg(long)]
        max_coords: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Parameter-sharing strategy [default: hard]
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Weight of the generation loss [default: 0.9]
    #[arg(long = "lambda")]
    pub lambda: Option<f64>,
    /// Optimizer steps for hard and soft [default: 2000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adam learning rate [default: 1e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Validate every N steps [default: 100]
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Soft strategy: weight of the encoder distance penalty [default: 1.0]
    #[arg(long)]
    pub sharing_coeff: Option<f64>,
    /// INF strategy: steps per generation or classification phase [default: 1000]
    #[arg(long)]
    pub steps_per_phase: Option<usize>,
    /// INF strategy: generation/classification rounds [default: 3]
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Threads per batch; results do not depend on it [default: 1]
    #[arg(long)]
    pub train_workers: Option<usize>,
    /// Parameter precision [default: f64]
    #[arg(long, value_enum)]
    pub dtype: Option<DtypeArg>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.strategy {
            let keep = cfg.strategy.clone();
            cfg.strategy = match (s, keep) {
                (StrategyArg::Hard, _) => TrainStrategy::Hard,
                (StrategyArg::Soft, k @ TrainStrategy::Soft { .. }) => k,
                (StrategyArg::Soft, _) => TrainStrategy::soft(),
                (StrategyArg::Inf, k @ TrainStrategy::Inf { .. }) => k,
                (StrategyArg::Inf, _) => TrainStrategy::inf(),
            };
        }
        if let Some(v) = self.lambda {
            cfg.model.lambda_weight = v;
        }
        if let Some(v) = self.steps {
            cfg.train.steps = v;
        }
        if let Some(v) = self.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.eval_every {
            cfg.train.eval_every = v;
        }
        if let Some(v) = self.train_workers {
            cfg.train.workers = v;
        }
        if let Some(d) = self.dtype {
            cfg.dtype = match d {
                DtypeArg::F32 => Dtype::F32,
                DtypeArg::F64 => Dtype::F64,
            };
        }
        match &mut cfg.strategy {
            TrainStrategy::Soft { sharing_coeff } => {
                if let Some(v) = self.sharing_coeff {
                    *sharing_coeff = v;
                }
            }
            TrainStrategy::Inf {
                steps_per_phase,
                rounds,
            } => {
                if let Some(v) = self.steps_per_phase {
                    *steps_per_phase = v;
                }
                if let Some(v) = self.rounds {
                    *rounds = v;
                }
            }
            TrainStrategy::Hard => {}
        }
    }
}

impl Cli {
    /// Effective configuration: defaults, then the config file, then flags
    /// (including `RANKEF_WORKERS`, which clap reads as `--workers`).
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let c = &self.common;
        let mut cfg = match &c.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(dir) = &c.out_dir {
            cfg.paths.set_out_dir(dir);
        }
        let paths = &mut cfg.paths;
        for (flag, slot) in [
            (&c.problems, &mut paths.problems),
            (&c.candidates, &mut paths.candidates),
            (&c.outcomes, &mut paths.outcomes),
            (&c.dataset, &mut paths.dataset),
            (&c.checkpoint, &mut paths.checkpoint),
            (&c.ranked, &mut paths.ranked),
            (&c.reports, &mut paths.reports),
        ] {
            if let Some(p) = flag {
                *slot = p.clone();
            }
        }
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        if let Some(w) = c.workers {
            cfg.exec.workers = w;
        }
        if let Some(s) = c.split {
            cfg.split = match s {
                SplitArg::All => SplitSel::All,
                SplitArg::Train => SplitSel::Train,
                SplitArg::Val => SplitSel::Val,
                SplitArg::Test => SplitSel::Test,
            };
        }
        match &self.command {
            Command::Exec {
                timeout_ms,
                max_output_bytes,
            } => {
                if let Some(v) = timeout_ms {
                    cfg.exec.wall_timeout_ms = *v;
                }
                if let Some(v) = max_output_bytes {
                    cfg.exec.max_output_bytes = *v;
                }
            }
            Command::BuildDataset {
                max_vocab,
                val_fraction,
                test_fraction,
            } => {
                if let Some(v) = max_vocab {
                    cfg.dataset.max_vocab = *v;
                }
                if let Some(v) = val_fraction {
                    cfg.dataset.val_fraction = *v;
                }
                if let Some(v) = test_fraction {
                    cfg.dataset.test_fraction = *v;
                }
            }
            Command::Train(args) => args.apply(&mut cfg),
            Command::Rank => {}
            Command::Eval {
                ks,
                solved_only,
                oracle_scores,
            } => {
                if let Some(ks) = ks {
                    cfg.ks = ks.clone();
                }
                cfg.solved_only |= *solved_only;
                cfg.oracle_scores |= *oracle_scores;
            }
            Command::Gradcheck {
                tolerance,
                max_coords,
            } => {
                if let Some(v) = tolerance {
                    cfg.gradcheck.tolerance = *v;
                }
                if let Some(v) = max_coords {
                    cfg.gradcheck.max_coords = *v;
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Runs the command and returns its stdout text.
    pub fn execute(&self) -> Result<String, CliError> {
        let cfg = self.resolve()?;
        Ok(match &self.command {
            Command::Exec { .. } => cmd_exec(&cfg)?.to_string(),
            Command::BuildDataset { .. } => cmd_build_dataset(&cfg)?.to_string(),
            Command::Train(_) => cmd_train(&cfg)?.to_string(),
            Command::Rank => cmd_rank(&cfg)?.to_string(),
            Command::Eval { .. } => {
                let report = cmd_eval(&cfg)?;
                rankef_core::eval::render_report(&report).trim_end().to_string()
            }
            Command::Gradcheck { .. } => {
                let summary = cmd_gradcheck(&cfg)?;
                if !summary.passed {
                    return Err(CliError::CheckFailed(summary.to_string()));
                }
                summary.to_string()
            }
        })
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::VALIDATION } else { exit::OK };
        }
    };
    match cli.execute() {
        Ok(out) => {
            println!("{out}");
            exit::OK
        }
        Err(e) => {
            eprintln!("rankef: {e}");
            e.exit_code()
        }
    }
}
