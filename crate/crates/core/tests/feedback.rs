use std::fs;
use std::path::PathBuf;

use rankef_core::corpus::{FailureDetail, OutcomeClass};
use rankef_core::feedback::{parse_traceback, render_feedback, TracebackInfo};
use serde::Deserialize;

fn testdata(sub: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../testdata").join(sub)
}

#[test]
fn traceback_golden_suite() {
    let dir = testdata("tracebacks");
    let mut names: Vec<String> = fs::read_dir(&dir)
        .unwrap()
        .filter_map(|e| {
            let name = e.unwrap().file_name().into_string().unwrap();
            name.strip_suffix(".stderr").map(str::to_string)
        })
        .collect();
    names.sort();
    assert!(names.len() >= 15, "only {} golden cases", names.len());
    for name in &names {
        let stderr = fs::read_to_string(dir.join(format!("{name}.stderr"))).unwrap();
        let source = fs::read_to_string(dir.join(format!("{name}.py"))).unwrap();
        let want: TracebackInfo =
            serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}.expected.json"))).unwrap()).unwrap();
        let got = parse_traceback(&stderr, &source).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(got, want, "{name}");
    }
}

#[derive(Deserialize)]
struct TemplateCase {
    name: String,
    outcome: OutcomeClass,
    detail: Option<FailureDetail>,
    expected: String,
}

#[test]
fn templates_are_frozen() {
    let text = fs::read_to_string(testdata("templates/golden.json")).unwrap();
    let cases: Vec<TemplateCase> = serde_json::from_str(&text).unwrap();
    let mut seen = [false; 3];
    for c in &cases {
        let got = render_feedback(c.outcome, c.detail.as_ref()).unwrap();
        assert_eq!(got.as_bytes(), c.expected.as_bytes(), "{}", c.name);
        seen[c.outcome.label_id()] = true;
    }
    assert_eq!(seen, [true; 3]);
}
