//! Traceback parsing and execution-feedback templates.
//!
//! Templates are frozen; downstream tokenization depends on them being
//! bit-exact.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{FailureDetail, OutcomeClass};

/// Feedback for a candidate that passes every test.
pub const CORRECT_FEEDBACK: &str = "This code is correct.";
pub const TRUNCATION_SUFFIX: &str = "…[truncated]";
/// Per-field cap, in characters.
pub const FIELD_CHAR_CAP: usize = 512;
/// Hard cap on a rendered feedback string, in bytes.
pub const FEEDBACK_BYTE_CAP: usize = 4096;

/// Name of the file a candidate is written to inside its scratch directory.
pub const CANDIDATE_FILE: &str = "main.py";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TracebackInfo {
    pub error_type: String,
    pub line_no: Option<usize>,
    pub line_code: Option<String>,
    pub message: String,
}

impl TracebackInfo {
    pub fn into_fault(self) -> FailureDetail {
        FailureDetail::RuntimeFault {
            error_type: self.error_type,
            line_no: self.line_no,
            line_code: self.line_code,
            message: self.message,
        }
    }

    /// Fallback used when stderr carries no recognisable terminator.
    pub fn unknown(stderr: &str) -> Self {
        let message = stderr
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .unwrap_or("")
            .trim()
            .to_string();
        TracebackInfo {
            error_type: "UnknownError".into(),
            line_no: None,
            line_code: None,
            message,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeedbackError {
    #[error("no traceback terminator line found in stderr")]
    UnparseableTraceback,
    #[error("outcome {0} requires a failure detail")]
    MissingDetail(OutcomeClass),
    #[error("failure detail {detail} does not match outcome {outcome}")]
    DetailMismatch {
        outcome: OutcomeClass,
        detail: &'static str,
    },
}

fn terminator_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^((?:[A-Za-z_][A-Za-z0-9_]*\.)*([A-Z][A-Za-z0-9_]*))(?::(?: (.*))?)?$").unwrap()
    })
}

fn frame_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"^\s*File "([^"]*)", line (\d+)"#).unwrap())
}

/// True when stderr contains a traceback header, a stack frame, or (as
/// its last nonblank line) an exception terminator following other frames.
pub fn has_traceback(stderr: &str) -> bool {
    stderr.contains("Traceback (most recent call last):")
        || stderr.lines().any(|l| frame_re().is_match(l))
}

fn is_candidate_frame(path: &str) -> bool {
    let base = path.rsplit(['/', '\\']).next().unwrap_or(path);
    base == CANDIDATE_FILE
}

/// Extracts the final exception type, its message, and the line of the
/// candidate source it was raised from.
///
/// The error type is the last component of the final terminator line
/// (`json.decoder.JSONDecodeError` yields `JSONDecodeError`). Line
/// attribution uses the last frame located in the candidate file; frames
/// inside library files are skipped.
pub fn parse_traceback(stderr: &str, source: &str) -> Result<TracebackInfo, FeedbackError> {
    let lines: Vec<&str> = stderr.lines().collect();
    let (term_idx, caps) = lines
        .iter()
        .enumerate()
        .rev()
        .filter(|(_, l)| !l.starts_with(char::is_whitespace))
        .find_map(|(i, l)| terminator_re().captures(l.trim_end()).map(|c| (i, c)))
        .ok_or(FeedbackError::UnparseableTraceback)?;
    let error_type = caps.get(2).map(|m| m.as_str()).unwrap_or_default().to_string();
    let message = caps.get(3).map(|m| m.as_str().to_string()).unwrap_or_default();

    let src_lines: Vec<&str> = source.lines().collect();
    let line_no = lines[..term_idx]
        .iter()
        .rev()
        .filter_map(|l| frame_re().captures(l))
        .find(|c| is_candidate_frame(&c[1]))
        .and_then(|c| c[2].parse::<usize>().ok())
        .filter(|&n| n >= 1 && n <= src_lines.len());
    let line_code = line_no.map(|n| src_lines[n - 1].trim().to_string());

    Ok(TracebackInfo {
        error_type,
        line_no,
        line_code,
        message,
    })
}

fn cap_field(text: &str) -> String {
    match text.char_indices().nth(FIELD_CHAR_CAP) {
        None => text.to_string(),
        Some((cut, _)) => format!("{}{TRUNCATION_SUFFIX}", &text[..cut]),
    }
}

fn cap_total(mut text: String) -> String {
    if text.len() <= FEEDBACK_BYTE_CAP {
        return text;
    }
    let mut cut = FEEDBACK_BYTE_CAP - TRUNCATION_SUFFIX.len();
    while !text.is_char_boundary(cut) {
        cut -= 1;
    }
    text.truncate(cut);
    text.push_str(TRUNCATION_SUFFIX);
    text
}

/// Renders the templated feedback for an execution outcome.
pub fn render_feedback(
    outcome: OutcomeClass,
    detail: Option<&FailureDetail>,
) -> Result<String, FeedbackError> {
    let text = match (outcome, detail) {
        (OutcomeClass::Correct, _) => return Ok(CORRECT_FEEDBACK.to_string()),
        (_, None) => return Err(FeedbackError::MissingDetail(outcome)),
        (
            OutcomeClass::IntentError,
            Some(FailureDetail::IntentMismatch {
                input,
                expected_output,
                actual_output,
                ..
            }),
        ) => format!(
            "Intent error. With input:\n{}\nExpected output:\n{}\nActual output:\n{}",
            cap_field(input),
            cap_field(expected_output),
            cap_field(actual_output)
        ),
        (
            OutcomeClass::ExecutionError,
            Some(FailureDetail::RuntimeFault {
                error_type,
                line_no,
                line_code,
                message,
            }),
        ) => {
            let location = match line_no {
                Some(n) => format!(
                    " at line {n}: {}",
                    cap_field(line_code.as_deref().unwrap_or(""))
                ),
                None => String::new(),
            };
            format!(
                "{}{location}\nError message: {}",
                cap_field(error_type),
                cap_field(message)
            )
        }
        (OutcomeClass::IntentError, Some(_)) => {
            return Err(FeedbackError::DetailMismatch {
                outcome,
                detail: "RuntimeFault",
            })
        }
        (OutcomeClass::ExecutionError, Some(_)) => {
            return Err(FeedbackError::DetailMismatch {
                outcome,
                detail: "IntentMismatch",
            })
        }
    };
    Ok(cap_total(text))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_index_error() {
        let stderr = "Traceback (most recent call last):\n  File \"main.py\", line 2, in <module>\n    print(x[5])\nIndexError: list index out of range\n";
        let info = parse_traceback(stderr, "x=[1]\nprint(x[5])").unwrap();
        assert_eq!(
            info,
            TracebackInfo {
                error_type: "IndexError".into(),
                line_no: Some(2),
                line_code: Some("print(x[5])".into()),
                message: "list index out of range".into(),
            }
        );
    }

    #[test]
    fn bare_terminator() {
        let info = parse_traceback("KeyboardInterrupt", "while True: pass").unwrap();
        assert_eq!(
            info,
            TracebackInfo {
                error_type: "KeyboardInterrupt".into(),
                line_no: None,
                line_code: None,
                message: String::new(),
            }
        );
    }

    #[test]
    fn library_frames_are_skipped() {
        let stderr = "Traceback (most recent call last):\n  File \"/tmp/s/main.py\", line 2, in <module>\n    json.loads(\"x\")\n  File \"/usr/lib/python3.10/json/__init__.py\", line 346, in loads\n    return _default_decoder.decode(s)\njson.decoder.JSONDecodeError: Expecting value: line 1 column 1 (char 0)\n";
        let info = parse_traceback(stderr, "import json\njson.loads(\"x\")\n").unwrap();
        assert_eq!(info.error_type, "JSONDecodeError");
        assert_eq!(info.line_no, Some(2));
        assert_eq!(info.line_code.as_deref(), Some("json.loads(\"x\")"));
        assert_eq!(info.message, "Expecting value: line 1 column 1 (char 0)");
    }

    #[test]
    fn no_terminator_is_unparseable() {
        assert_eq!(
            parse_traceback("segfault happened\n", ""),
            Err(FeedbackError::UnparseableTraceback)
        );
        let fallback = TracebackInfo::unknown("first\nlast line\n\n");
        assert_eq!(fallback.error_type, "UnknownError");
        assert_eq!(fallback.message, "last line");
    }

    #[test]
    fn out_of_range_line_is_dropped() {
        let stderr = "  File \"main.py\", line 9\n    \nSyntaxError: unexpected EOF while parsing\n";
        let info = parse_traceback(stderr, "if x:\n").unwrap();
        assert_eq!(info.line_no, None);
        assert_eq!(info.line_code, None);
    }

    #[test]
    fn renders_templates() {
        assert_eq!(
            render_feedback(OutcomeClass::Correct, None).unwrap(),
            "This code is correct."
        );
        let intent = FailureDetail::IntentMismatch {
            test_index: 0,
            input: "3".into(),
            expected_output: "6".into(),
            actual_output: "4".into(),
        };
        assert_eq!(
            render_feedback(OutcomeClass::IntentError, Some(&intent)).unwrap(),
            "Intent error. With input:\n3\nExpected output:\n6\nActual output:\n4"
        );
        let fault = FailureDetail::RuntimeFault {
            error_type: "IndexError".into(),
            line_no: Some(2),
            line_code: Some("print(x[5])".into()),
            message: "list index out of range".into(),
        };
        assert_eq!(
            render_feedback(OutcomeClass::ExecutionError, Some(&fault)).unwrap(),
            "IndexError at line 2: print(x[5])\nError message: list index out of range"
        );
        let no_line = FailureDetail::RuntimeFault {
            error_type: "TimeoutError".into(),
            line_no: None,
            line_code: None,
            message: "wall time limit exceeded".into(),
        };
        assert_eq!(
            render_feedback(OutcomeClass::ExecutionError, Some(&no_line)).unwrap(),
            "TimeoutError\nError message: wall time limit exceeded"
        );
    }

    #[test]
    fn missing_and_mismatched_detail() {
        assert_eq!(
            render_feedback(OutcomeClass::IntentError, None),
            Err(FeedbackError::MissingDetail(OutcomeClass::IntentError))
        );
        let fault = FailureDetail::RuntimeFault {
            error_type: "E".into(),
            line_no: None,
            line_code: None,
            message: String::new(),
        };
        assert!(matches!(
            render_feedback(OutcomeClass::IntentError, Some(&fault)),
            Err(FeedbackError::DetailMismatch { .. })
        ));
    }

    #[test]
    fn long_fields_are_truncated() {
        let detail = FailureDetail::IntentMismatch {
            test_index: 0,
            input: "x".repeat(600),
            expected_output: "y".into(),
            actual_output: "z".into(),
        };
        let text = render_feedback(OutcomeClass::IntentError, Some(&detail)).unwrap();
        let expected_input = format!("{}{TRUNCATION_SUFFIX}", "x".repeat(512));
        assert!(text.contains(&format!("With input:\n{expected_input}\n")));
    }

    proptest! {
        #[test]
        fn rendering_is_bounded(input in ".{0,700}", expected in ".{0,700}", actual in ".{0,700}") {
            let detail = FailureDetail::IntentMismatch { test_index: 0, input, expected_output: expected, actual_output: actual };
            let text = render_feedback(OutcomeClass::IntentError, Some(&detail)).unwrap();
            prop_assert!(text.len() <= FEEDBACK_BYTE_CAP);
        }

        #[test]
        fn rendering_is_injective_on_short_faults(
            a in "[A-Za-z]{1,12}", b in "[A-Za-z]{1,12}",
            la in proptest::option::of(1usize..50), lb in proptest::option::of(1usize..50),
            ma in "[a-z ]{0,20}", mb in "[a-z ]{0,20}",
        ) {
            let mk = |t: &str, l: Option<usize>, m: &str| FailureDetail::RuntimeFault {
                error_type: t.into(), line_no: l, line_code: l.map(|_| "x = 1".into()), message: m.into(),
            };
            let da = mk(&a, la, &ma);
            let db = mk(&b, lb, &mb);
            let ra = render_feedback(OutcomeClass::ExecutionError, Some(&da)).unwrap();
            let rb = render_feedback(OutcomeClass::ExecutionError, Some(&db)).unwrap();
            prop_assert_eq!(ra == rb, da == db);
        }
    }
}
