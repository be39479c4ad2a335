//! Runs candidates against their unit tests in isolated child processes.
//!
//! Each test gets a fresh interpreter process started in a fresh, empty
//! scratch directory holding only the candidate file. Stdin is the test
//! input; stdout and stderr are captured up to a byte cap. Execution
//! stops at the first failing test.
//!
//! Isolation is best-effort: separate processes, a cleared environment,
//! wall-clock timeouts, output caps and throwaway directories. There is no
//! OS-level containerization, memory limiting or network sandboxing.

use std::env;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::corpus::{
    index_problems, Candidate, ExecutionRecord, FailureDetail, OutcomeClass, Problem, TestRun,
};
use crate::feedback::{has_traceback, parse_traceback, TracebackInfo, CANDIDATE_FILE};

/// Environment variable that overrides the interpreter path.
pub const INTERPRETER_ENV: &str = "RANKEF_INTERPRETER";
pub const DEFAULT_INTERPRETER: &str = "python3";

static SPAWNS: AtomicUsize = AtomicUsize::new(0);

/// Number of child processes spawned by this module since process start.
pub fn spawn_count() -> usize {
    SPAWNS.load(Ordering::SeqCst)
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("interpreter {0:?} not found or not executable")]
    InterpreterMissing(String),
    #[error("invalid execution limits: {0}")]
    InvalidLimits(&'static str),
    #[error("candidate {candidate_id} references unknown problem {problem_id:?}")]
    UnknownProblem { problem_id: String, candidate_id: u64 },
    #[error("sandbox i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecLimits {
    pub wall_timeout_ms: u64,
    pub max_output_bytes: usize,
    pub workers: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            wall_timeout_ms: 5000,
            max_output_bytes: 1 << 20,
            workers: 1,
        }
    }
}

impl ExecLimits {
    pub fn validate(&self) -> Result<(), ExecError> {
        if self.wall_timeout_ms == 0 {
            return Err(ExecError::InvalidLimits("wall_timeout_ms must be > 0"));
        }
        if self.max_output_bytes == 0 {
            return Err(ExecError::InvalidLimits("max_output_bytes must be > 0"));
        }
        if self.workers == 0 {
            return Err(ExecError::InvalidLimits("workers must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interpreter {
    path: PathBuf,
}

impl Interpreter {
    /// Resolves `RANKEF_INTERPRETER`, falling back to `python3` on `PATH`.
    pub fn from_env() -> Result<Self, ExecError> {
        match env::var(INTERPRETER_ENV) {
            Ok(v) if !v.is_empty() => Self::resolve(&v),
            _ => Self::resolve(DEFAULT_INTERPRETER),
        }
    }

    pub fn resolve(name: &str) -> Result<Self, ExecError> {
        let missing = || ExecError::InterpreterMissing(name.to_string());
        let candidate = Path::new(name);
        if candidate.components().count() > 1 {
            return if candidate.is_file() {
                Ok(Interpreter {
                    path: candidate.to_path_buf(),
                })
            } else {
                Err(missing())
            };
        }
        let path_var = env::var_os("PATH").ok_or_else(missing)?;
        env::split_paths(&path_var)
            .map(|dir| dir.join(name))
            .find(|p| p.is_file())
            .map(|path| Interpreter { path })
            .ok_or_else(missing)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// How a single test process ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Exited(i32),
    /// Terminated by a signal.
    Killed,
    TimedOut,
    OutputOverflow,
}

impl RunStatus {
    fn from_exit(status: ExitStatus) -> Self {
        status.code().map_or(RunStatus::Killed, RunStatus::Exited)
    }

    pub fn is_clean(self) -> bool {
        self == RunStatus::Exited(0)
    }
}

/// Raw result of one interpreter invocation.
#[derive(Debug, Clone)]
pub struct RawRun {
    pub status: RunStatus,
    pub stdout: String,
    pub stderr: String,
    pub wall_ms: u64,
}

/// Strips trailing whitespace from every line and drops trailing blank
/// lines. Outputs are compared byte-for-byte after this.
pub fn normalize_output(text: &str) -> String {
    let mut lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines.join("\n")
}

/// Outcome of the last attempted test, given the tests attempted so far.
///
/// A non-clean exit, a traceback in stderr, a timeout or an output overflow
/// is an execution error; a clean run is correct only when every one of
/// `n_tests` tests has passed, and an intent error otherwise.
pub fn classify_outcome(
    status: RunStatus,
    stderr: &str,
    per_test: &[TestRun],
    n_tests: usize,
) -> OutcomeClass {
    if !status.is_clean() || has_traceback(stderr) {
        OutcomeClass::ExecutionError
    } else if per_test.len() == n_tests && per_test.iter().all(|t| t.passed) {
        OutcomeClass::Correct
    } else {
        OutcomeClass::IntentError
    }
}

fn spawn_reader<R: Read + Send + 'static>(
    mut pipe: R,
    cap: usize,
    overflow: Arc<AtomicBool>,
) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        loop {
            match pipe.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                    if n > room {
                        overflow.store(true, Ordering::SeqCst);
                    }
                }
            }
        }
        kept
    })
}

fn wait_with_limits(
    child: &mut Child,
    timeout: Duration,
    overflow: &AtomicBool,
) -> std::io::Result<RunStatus> {
    let start = Instant::now();
    let poll = Duration::from_millis(5);
    loop {
        if let Some(status) = child.wait_timeout(poll)? {
            return Ok(if overflow.load(Ordering::SeqCst) {
                RunStatus::OutputOverflow
            } else {
                RunStatus::from_exit(status)
            });
        }
        let verdict = if overflow.load(Ordering::SeqCst) {
            Some(RunStatus::OutputOverflow)
        } else if start.elapsed() >= timeout {
            Some(RunStatus::TimedOut)
        } else {
            None
        };
        if let Some(v) = verdict {
            let _ = child.kill();
            child.wait()?;
            return Ok(v);
        }
    }
}

/// Runs `source` once with `input` on stdin inside a fresh scratch
/// directory.
pub fn run_once(
    interpreter: &Interpreter,
    source: &str,
    input: &str,
    limits: &ExecLimits,
) -> Result<RawRun, ExecError> {
    let scratch = tempfile::Builder::new().prefix("rankef-").tempdir()?;
    std::fs::write(scratch.path().join(CANDIDATE_FILE), source)?;

    let mut cmd = Command::new(interpreter.path());
    cmd.arg(CANDIDATE_FILE)
        .current_dir(scratch.path())
        .env_clear()
        .env("PYTHONHASHSEED", "0")
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .env("PYTHONIOENCODING", "utf-8")
        .env("LC_ALL", "C.UTF-8")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if let Some(path) = env::var_os("PATH") {
        cmd.env("PATH", path);
    }

    let start = Instant::now();
    let mut child = cmd.spawn()?;
    SPAWNS.fetch_add(1, Ordering::SeqCst);

    let overflow = Arc::new(AtomicBool::new(false));
    let out_reader = spawn_reader(
        child.stdout.take().expect("piped stdout"),
        limits.max_output_bytes,
        overflow.clone(),
    );
    let err_reader = spawn_reader(
        child.stderr.take().expect("piped stderr"),
        limits.max_output_bytes,
        overflow.clone(),
    );
    let mut stdin = child.stdin.take().expect("piped stdin");
    let input_bytes = input.as_bytes().to_vec();
    let writer = thread::spawn(move || {
        // The child may exit without draining stdin; a broken pipe is fine.
        let _ = stdin.write_all(&input_bytes);
    });

    let status = wait_with_limits(
        &mut child,
        Duration::from_millis(limits.wall_timeout_ms),
        &overflow,
    )?;
    let wall_ms = start.elapsed().as_millis() as u64;
    let _ = writer.join();
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();

    Ok(RawRun {
        status,
        stdout: String::from_utf8_lossy(&stdout).into_owned(),
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
        wall_ms,
    })
}

fn fault_detail(run: &RawRun, source: &str, limits: &ExecLimits) -> FailureDetail {
    let info = match run.status {
        RunStatus::TimedOut => TracebackInfo {
            error_type: "TimeoutError".into(),
            line_no: None,
            line_code: None,
            message: format!("wall time limit of {} ms exceeded", limits.wall_timeout_ms),
        },
        RunStatus::OutputOverflow => TracebackInfo {
            error_type: "OutputLimitExceeded".into(),
            line_no: None,
            line_code: None,
            message: format!("output exceeded {} bytes", limits.max_output_bytes),
        },
        _ => parse_traceback(&run.stderr, source).unwrap_or_else(|_| {
            let mut info = TracebackInfo::unknown(&run.stderr);
            if info.message.is_empty() {
                info.message = match run.status {
                    RunStatus::Exited(code) => format!("process exited with status {code}"),
                    _ => "process terminated by a signal".into(),
                };
            }
            info
        }),
    };
    info.into_fault()
}

/// Executes one candidate against its problem's tests, short-circuiting on
/// the first failure.
pub fn run_candidate(
    interpreter: &Interpreter,
    candidate: &Candidate,
    problem: &Problem,
    limits: &ExecLimits,
) -> Result<ExecutionRecord, ExecError> {
    let n_tests = problem.tests.len();
    let mut per_test = Vec::with_capacity(n_tests);
    let mut failure_detail = None;
    let mut raw_stderr = String::new();
    let mut outcome = OutcomeClass::Correct;

    for (test_index, test) in problem.tests.iter().enumerate() {
        let run = run_once(interpreter, &candidate.source, &test.input, limits)?;
        let actual = normalize_output(&run.stdout);
        let clean = run.status.is_clean() && !has_traceback(&run.stderr);
        let passed = clean && actual == normalize_output(&test.expected_output);
        per_test.push(TestRun {
            test_index,
            passed,
            actual_output: run.stdout.clone(),
            wall_ms: run.wall_ms,
        });
        raw_stderr = run.stderr.clone();
        outcome = classify_outcome(run.status, &run.stderr, &per_test, n_tests);
        match outcome {
            OutcomeClass::ExecutionError => {
                failure_detail = Some(fault_detail(&run, &candidate.source, limits));
                break;
            }
            _ if !passed => {
                failure_detail = Some(FailureDetail::IntentMismatch {
                    test_index,
                    input: normalize_output(&test.input),
                    expected_output: normalize_output(&test.expected_output),
                    actual_output: actual,
                });
                break;
            }
            _ => {}
        }
    }

    Ok(ExecutionRecord {
        problem_id: candidate.problem_id.clone(),
        candidate_id: candidate.candidate_id,
        outcome,
        per_test,
        failure_detail,
        raw_stderr,
    })
}

/// Executes every candidate on a pool of `limits.workers` threads. The
/// result is sorted by `(problem_id, candidate_id)` regardless of
/// scheduling.
pub fn batch_execute(
    interpreter: &Interpreter,
    problems: &[Problem],
    candidates: &[Candidate],
    limits: &ExecLimits,
) -> Result<Vec<ExecutionRecord>, ExecError> {
    limits.validate()?;
    let by_id = index_problems(problems);
    let jobs = candidates
        .iter()
        .map(|c| {
            by_id
                .get(c.problem_id.as_str())
                .map(|p| (c, *p))
                .ok_or_else(|| ExecError::UnknownProblem {
                    problem_id: c.problem_id.clone(),
                    candidate_id: c.candidate_id,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(limits.workers)
        .build()
        .map_err(|e| ExecError::Pool(e.to_string()))?;
    let mut records = pool.install(|| {
        jobs.par_iter()
            .map(|(c, p)| run_candidate(interpreter, c, p, limits))
            .collect::<Result<Vec<_>, _>>()
    })?;
    records.sort_by(|a, b| {
        (a.problem_id.as_str(), a.candidate_id).cmp(&(b.problem_id.as_str(), b.candidate_id))
    });
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(status: RunStatus, passed: &[bool], n: usize) -> OutcomeClass {
        let per: Vec<TestRun> = passed
            .iter()
            .enumerate()
            .map(|(i, &p)| TestRun {
                test_index: i,
                passed: p,
                actual_output: String::new(),
                wall_ms: 0,
            })
            .collect();
        classify_outcome(status, "", &per, n)
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_output("6 \n"), "6");
        assert_eq!(normalize_output("a\nb\n\n"), "a\nb");
        assert_eq!(normalize_output(""), "");
        assert_eq!(normalize_output("x\r\ny \t\r\n\n  \n"), "x\ny");
    }

    #[test]
    fn classify_examples() {
        assert_eq!(run(RunStatus::Exited(0), &[true, true], 2), OutcomeClass::Correct);
        assert_eq!(run(RunStatus::TimedOut, &[false], 2), OutcomeClass::ExecutionError);
        assert_eq!(run(RunStatus::Exited(0), &[false], 3), OutcomeClass::IntentError);
        assert_eq!(run(RunStatus::Exited(1), &[false], 1), OutcomeClass::ExecutionError);
        assert_eq!(run(RunStatus::OutputOverflow, &[false], 1), OutcomeClass::ExecutionError);
        assert_eq!(run(RunStatus::Killed, &[false], 1), OutcomeClass::ExecutionError);
        // A clean exit with a printed traceback is still an execution error.
        let per = [TestRun {
            test_index: 0,
            passed: false,
            actual_output: String::new(),
            wall_ms: 0,
        }];
        let stderr = "Traceback (most recent call last):\n  File \"main.py\", line 1\nValueError: x";
        assert_eq!(
            classify_outcome(RunStatus::Exited(0), stderr, &per, 1),
            OutcomeClass::ExecutionError
        );
    }

    #[test]
    fn limits_are_validated() {
        assert!(ExecLimits::default().validate().is_ok());
        let bad = ExecLimits {
            wall_timeout_ms: 0,
            ..ExecLimits::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExecLimits {
            max_output_bytes: 0,
            ..ExecLimits::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn missing_interpreter() {
        assert!(matches!(
            Interpreter::resolve("/definitely/not/here/python"),
            Err(ExecError::InterpreterMissing(_))
        ));
        assert!(matches!(
            Interpreter::resolve("no-such-interpreter-rankef"),
            Err(ExecError::InterpreterMissing(_))
        ));
    }
}
