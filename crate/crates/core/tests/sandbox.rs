use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rankef_core::corpus::{
    read_candidates, read_jsonl, read_problems, Candidate, FailureDetail, OutcomeClass, Problem,
    TestCase,
};
use rankef_core::sandbox::{batch_execute, run_candidate, ExecError, ExecLimits, Interpreter};
use serde::Deserialize;

fn python() -> Interpreter {
    Interpreter::from_env().expect("python3 is required for sandbox tests")
}

fn problem(tests: &[(&str, &str)]) -> Problem {
    Problem {
        problem_id: "p".into(),
        description: "d".into(),
        tests: tests
            .iter()
            .map(|(i, o)| TestCase {
                input: i.to_string(),
                expected_output: o.to_string(),
            })
            .collect(),
        difficulty: None,
    }
}

fn cand(id: u64, source: &str) -> Candidate {
    Candidate {
        problem_id: "p".into(),
        candidate_id: id,
        source: source.into(),
    }
}

#[test]
fn correct_program() {
    let r = run_candidate(&python(), &cand(0, "print(int(input())*2)\n"), &problem(&[("3", "6")]), &ExecLimits::default()).unwrap();
    assert_eq!(r.outcome, OutcomeClass::Correct);
    assert!(r.failure_detail.is_none());
    assert_eq!(r.per_test.len(), 1);
    assert!(r.per_test[0].passed);
}

#[test]
fn index_error_is_located() {
    let r = run_candidate(&python(), &cand(0, "x=[1]\nprint(x[5])\n"), &problem(&[("", "1")]), &ExecLimits::default()).unwrap();
    assert_eq!(r.outcome, OutcomeClass::ExecutionError);
    match r.failure_detail {
        Some(FailureDetail::RuntimeFault { error_type, line_no, line_code, .. }) => {
            assert_eq!(error_type, "IndexError");
            assert_eq!(line_no, Some(2));
            assert_eq!(line_code.as_deref(), Some("print(x[5])"));
        }
        other => panic!("unexpected detail {other:?}"),
    }
}

#[test]
fn wrong_output_is_intent_error() {
    let r = run_candidate(&python(), &cand(0, "print(int(input())+1)\n"), &problem(&[("3", "6"), ("1", "2")]), &ExecLimits::default()).unwrap();
    assert_eq!(r.outcome, OutcomeClass::IntentError);
    // short-circuits after the first failure
    assert_eq!(r.per_test.len(), 1);
    match r.failure_detail {
        Some(FailureDetail::IntentMismatch { test_index, actual_output, expected_output, .. }) => {
            assert_eq!(test_index, 0);
            assert_eq!(actual_output, "4");
            assert_eq!(expected_output, "6");
        }
        other => panic!("unexpected detail {other:?}"),
    }
}

#[test]
fn each_test_gets_a_fresh_directory() {
    // Leaves a marker behind and fails if one is already there.
    let src = "import os\nif os.path.exists('marker'):\n    print('dirty')\nelse:\n    open('marker', 'w').write('x')\n    print('clean')\n";
    let p = problem(&[("", "clean"), ("", "clean"), ("", "clean")]);
    let r = run_candidate(&python(), &cand(0, src), &p, &ExecLimits::default()).unwrap();
    assert_eq!(r.outcome, OutcomeClass::Correct);
}

#[test]
fn environment_is_cleared() {
    std::env::set_var("RANKEF_SECRET_PROBE", "leak");
    let src = "import os\nprint(os.environ.get('RANKEF_SECRET_PROBE', 'none'))\n";
    let r = run_candidate(&python(), &cand(0, src), &problem(&[("", "none")]), &ExecLimits::default()).unwrap();
    assert_eq!(r.outcome, OutcomeClass::Correct);
}

#[test]
fn batch_order_is_independent_of_workers() {
    let p = problem(&[("2", "4"), ("5", "10")]);
    let sources = [
        "print(int(input())*2)",
        "print(int(input())+2)",
        "raise ValueError('no')",
        "print(2*int(input()))",
        "import time\ntime.sleep(0.05)\nprint(int(input())*2)",
        "print(",
    ];
    let cands: Vec<Candidate> = (0..12u64)
        .rev()
        .map(|i| cand(i, sources[i as usize % sources.len()]))
        .collect();
    let mut runs = Vec::new();
    for workers in [1, 4, 16] {
        let limits = ExecLimits { workers, ..ExecLimits::default() };
        let recs = batch_execute(&python(), &[p.clone()], &cands, &limits).unwrap();
        let ids: Vec<u64> = recs.iter().map(|r| r.candidate_id).collect();
        assert_eq!(ids, (0..12).collect::<Vec<_>>());
        runs.push(recs.iter().map(|r| (r.outcome, r.failure_detail.clone())).collect::<Vec<_>>());
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);
}

#[test]
fn unknown_problem_is_rejected() {
    let mut c = cand(0, "print(1)");
    c.problem_id = "elsewhere".into();
    let err = batch_execute(&python(), &[problem(&[("", "1")])], &[c], &ExecLimits::default()).unwrap_err();
    assert!(matches!(err, ExecError::UnknownProblem { .. }));
}

#[test]
fn missing_interpreter_is_an_error() {
    assert!(matches!(
        Interpreter::resolve("/nonexistent/bin/python9"),
        Err(ExecError::InterpreterMissing(_))
    ));
}

#[derive(Deserialize)]
struct OracleRow {
    problem_id: String,
    candidate_id: u64,
    outcome: OutcomeClass,
    error_type: Option<String>,
    failing_test: Option<usize>,
}

fn testdata() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata/exec_oracle")
}

#[test]
fn oracle_corpus_matches() {
    let dir = testdata();
    let problems = read_problems(&dir.join("problems.jsonl")).unwrap();
    let candidates = read_candidates(&dir.join("candidates.jsonl")).unwrap();
    let oracle: Vec<OracleRow> = read_jsonl(&dir.join("oracle.jsonl")).unwrap();
    let limits = ExecLimits { wall_timeout_ms: 2000, workers: 4, ..ExecLimits::default() };

    let start = Instant::now();
    let records = batch_execute(&python(), &problems, &candidates, &limits).unwrap();
    assert!(start.elapsed().as_secs() < 60);

    let by_key: BTreeMap<(String, u64), _> = records
        .iter()
        .map(|r| ((r.problem_id.clone(), r.candidate_id), r))
        .collect();
    assert_eq!(oracle.len(), 20);
    for row in &oracle {
        let rec = by_key[&(row.problem_id.clone(), row.candidate_id)];
        let what = format!("{} #{}", row.problem_id, row.candidate_id);
        assert_eq!(rec.outcome, row.outcome, "{what}");
        assert_eq!(rec.derived_outcome(), row.outcome, "{what}");
        let error_type = match &rec.failure_detail {
            Some(FailureDetail::RuntimeFault { error_type, .. }) => Some(error_type.clone()),
            _ => None,
        };
        assert_eq!(error_type, row.error_type, "{what}");
        let failing = rec.per_test.iter().position(|t| !t.passed);
        assert_eq!(failing, row.failing_test, "{what}");
    }
}
