//! Domain records shared by every pipeline stage, JSONL I/O and corpus
//! validation.
//!
//! Every record is serialized one-per-line as UTF-8 JSON with
//! `lower_snake_case` field names. Outcome classes serialize as their
//! variant names (`"Correct"`, `"IntentError"`, `"ExecutionError"`).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Introductory,
    Interview,
    Competition,
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Introductory => "introductory",
            Difficulty::Interview => "interview",
            Difficulty::Competition => "competition",
        })
    }
}

/// One stdin/stdout unit test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub expected_output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub problem_id: String,
    pub description: String,
    pub tests: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub problem_id: String,
    pub candidate_id: u64,
    pub source: String,
}

/// Candidate as it appears on disk, where `candidate_id` may be omitted.
#[derive(Debug, Clone, Deserialize)]
struct RawCandidate {
    problem_id: String,
    #[serde(default)]
    candidate_id: Option<u64>,
    source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeClass {
    Correct,
    IntentError,
    ExecutionError,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 3] = [
        OutcomeClass::Correct,
        OutcomeClass::IntentError,
        OutcomeClass::ExecutionError,
    ];

    /// Frozen label coding: Correct=0, IntentError=1, ExecutionError=2.
    pub fn label_id(self) -> usize {
        match self {
            OutcomeClass::Correct => 0,
            OutcomeClass::IntentError => 1,
            OutcomeClass::ExecutionError => 2,
        }
    }

    pub fn from_label_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }
}

impl fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutcomeClass::Correct => "Correct",
            OutcomeClass::IntentError => "IntentError",
            OutcomeClass::ExecutionError => "ExecutionError",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestRun {
    pub test_index: usize,
    pub passed: bool,
    pub actual_output: String,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureDetail {
    IntentMismatch {
        test_index: usize,
        input: String,
        expected_output: String,
        actual_output: String,
    },
    RuntimeFault {
        error_type: String,
        line_no: Option<usize>,
        line_code: Option<String>,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub problem_id: String,
    pub candidate_id: u64,
    pub outcome: OutcomeClass,
    pub per_test: Vec<TestRun>,
    pub failure_detail: Option<FailureDetail>,
    pub raw_stderr: String,
}

impl ExecutionRecord {
    /// Outcome re-derived from the stored evidence: a runtime fault means
    /// ExecutionError, a failed test without a fault means IntentError.
    pub fn derived_outcome(&self) -> OutcomeClass {
        match &self.failure_detail {
            Some(FailureDetail::RuntimeFault { .. }) => OutcomeClass::ExecutionError,
            _ if self.per_test.iter().any(|t| !t.passed) => OutcomeClass::IntentError,
            Some(FailureDetail::IntentMismatch { .. }) => OutcomeClass::IntentError,
            None => OutcomeClass::Correct,
        }
    }
}

/// The (N, S, E, F) training quadruple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankSample {
    pub problem_id: String,
    pub candidate_id: u64,
    pub description: String,
    pub source: String,
    pub label: OutcomeClass,
    pub feedback: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub problem_id: String,
    pub candidate_id: u64,
    pub score: f64,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            path: path.display().to_string(),
            line: idx + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for rec in records {
        let line = serde_json::to_string(rec).map_err(|source| CorpusError::Json {
            path: path.display().to_string(),
            line: 0,
            source,
        })?;
        w.write_all(line.as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_problems(path: &Path) -> Result<Vec<Problem>, CorpusError> {
    read_jsonl(path)
}

/// Reads candidates, assigning `candidate_id` by per-problem input order
/// where it is absent.
pub fn read_candidates(path: &Path) -> Result<Vec<Candidate>, CorpusError> {
    let raw: Vec<RawCandidate> = read_jsonl(path)?;
    Ok(assign_candidate_ids(raw))
}

fn assign_candidate_ids(raw: Vec<RawCandidate>) -> Vec<Candidate> {
    let mut next: HashMap<String, u64> = HashMap::new();
    raw.into_iter()
        .map(|r| {
            let counter = next.entry(r.problem_id.clone()).or_insert(0);
            let id = r.candidate_id.unwrap_or(*counter);
            *counter = (*counter).max(id + 1);
            Candidate {
                problem_id: r.problem_id,
                candidate_id: id,
                source: r.source,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    DuplicateProblem { problem_id: String },
    EmptyDescription { problem_id: String },
    EmptyTests { problem_id: String },
    DuplicateCandidate { problem_id: String, candidate_id: u64 },
    DanglingCandidate { problem_id: String, candidate_id: u64 },
    EmptySource { problem_id: String, candidate_id: u64 },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::DuplicateProblem { problem_id } => {
                write!(f, "duplicate problem_id {problem_id:?}")
            }
            ValidationIssue::EmptyDescription { problem_id } => {
                write!(f, "problem {problem_id:?} has an empty description")
            }
            ValidationIssue::EmptyTests { problem_id } => {
                write!(f, "problem {problem_id:?} has no tests")
            }
            ValidationIssue::DuplicateCandidate {
                problem_id,
                candidate_id,
            } => write!(f, "duplicate candidate ({problem_id:?}, {candidate_id})"),
            ValidationIssue::DanglingCandidate {
                problem_id,
                candidate_id,
            } => write!(
                f,
                "candidate {candidate_id} references unknown problem {problem_id:?}"
            ),
            ValidationIssue::EmptySource {
                problem_id,
                candidate_id,
            } => write!(f, "candidate ({problem_id:?}, {candidate_id}) has empty source"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}

pub fn validate_corpus(problems: &[Problem], candidates: &[Candidate]) -> ValidationReport {
    let mut issues = Vec::new();
    let mut seen = BTreeSet::new();
    for p in problems {
        if !seen.insert(p.problem_id.as_str()) {
            issues.push(ValidationIssue::DuplicateProblem {
                problem_id: p.problem_id.clone(),
            });
        }
        if p.description.trim().is_empty() {
            issues.push(ValidationIssue::EmptyDescription {
                problem_id: p.problem_id.clone(),
            });
        }
        if p.tests.is_empty() {
            issues.push(ValidationIssue::EmptyTests {
                problem_id: p.problem_id.clone(),
            });
        }
    }
    let mut seen_cands = BTreeSet::new();
    for c in candidates {
        if !seen.contains(c.problem_id.as_str()) {
            issues.push(ValidationIssue::DanglingCandidate {
                problem_id: c.problem_id.clone(),
                candidate_id: c.candidate_id,
            });
        }
        if !seen_cands.insert((c.problem_id.as_str(), c.candidate_id)) {
            issues.push(ValidationIssue::DuplicateCandidate {
                problem_id: c.problem_id.clone(),
                candidate_id: c.candidate_id,
            });
        }
        if c.source.is_empty() {
            issues.push(ValidationIssue::EmptySource {
                problem_id: c.problem_id.clone(),
                candidate_id: c.candidate_id,
            });
        }
    }
    ValidationReport { issues }
}

/// Problems indexed by id.
pub fn index_problems(problems: &[Problem]) -> BTreeMap<&str, &Problem> {
    problems.iter().map(|p| (p.problem_id.as_str(), p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(id: &str) -> Problem {
        Problem {
            problem_id: id.into(),
            description: format!("task {id}"),
            tests: vec![TestCase {
                input: "1".into(),
                expected_output: "1".into(),
            }],
            difficulty: None,
        }
    }

    fn cand(pid: &str, id: u64) -> Candidate {
        Candidate {
            problem_id: pid.into(),
            candidate_id: id,
            source: "print(1)".into(),
        }
    }

    #[test]
    fn duplicate_candidate_is_flagged() {
        let report = validate_corpus(&[problem("p")], &[cand("p", 0), cand("p", 0)]);
        assert_eq!(
            report.issues,
            vec![ValidationIssue::DuplicateCandidate {
                problem_id: "p".into(),
                candidate_id: 0
            }]
        );
    }

    #[test]
    fn dangling_reference_is_flagged() {
        let report = validate_corpus(&[problem("p")], &[cand("q", 0)]);
        assert_eq!(
            report.issues,
            vec![ValidationIssue::DanglingCandidate {
                problem_id: "q".into(),
                candidate_id: 0
            }]
        );
    }

    #[test]
    fn well_formed_corpus_is_clean() {
        let problems: Vec<_> = ["a", "b", "c"].iter().map(|id| problem(id)).collect();
        let cands: Vec<_> = ["a", "b", "c"]
            .iter()
            .flat_map(|id| [cand(id, 0), cand(id, 1)])
            .collect();
        assert!(validate_corpus(&problems, &cands).is_ok());
    }

    #[test]
    fn empty_tests_and_description_are_flagged() {
        let mut p = problem("p");
        p.tests.clear();
        p.description = "  ".into();
        let report = validate_corpus(&[p], &[]);
        assert_eq!(report.issues.len(), 2);
    }

    #[test]
    fn missing_candidate_ids_follow_input_order() {
        let raw = vec![
            RawCandidate {
                problem_id: "p".into(),
                candidate_id: None,
                source: "a".into(),
            },
            RawCandidate {
                problem_id: "q".into(),
                candidate_id: None,
                source: "b".into(),
            },
            RawCandidate {
                problem_id: "p".into(),
                candidate_id: None,
                source: "c".into(),
            },
        ];
        let ids: Vec<_> = assign_candidate_ids(raw)
            .into_iter()
            .map(|c| (c.problem_id, c.candidate_id))
            .collect();
        assert_eq!(
            ids,
            vec![("p".into(), 0), ("q".into(), 0), ("p".into(), 1)]
        );
    }

    #[test]
    fn outcome_serializes_as_variant_name() {
        assert_eq!(
            serde_json::to_string(&OutcomeClass::IntentError).unwrap(),
            "\"IntentError\""
        );
        let d = Difficulty::Interview;
        assert_eq!(serde_json::to_string(&d).unwrap(), "\"interview\"");
    }

    #[test]
    fn label_coding_is_frozen() {
        assert_eq!(OutcomeClass::Correct.label_id(), 0);
        assert_eq!(OutcomeClass::IntentError.label_id(), 1);
        assert_eq!(OutcomeClass::ExecutionError.label_id(), 2);
        for c in OutcomeClass::ALL {
            assert_eq!(OutcomeClass::from_label_id(c.label_id()), Some(c));
        }
    }
}
