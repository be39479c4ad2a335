//! Ranking and Pass@k.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    index_problems, Candidate, Difficulty, ExecutionRecord, OutcomeClass, Problem, ScoredCandidate,
};
use crate::model::{CandidateScorer, ModelError};

pub const DEFAULT_KS: [usize; 3] = [1, 2, 5];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no candidates to rank")]
    EmptyList,
    #[error("scores for more than one problem ({0:?} and {1:?}) in one list")]
    MixedProblems(String, String),
    #[error("invalid counts n={n}, c={c}, k={k}: need 0 <= c <= n and 1 <= k <= n")]
    InvalidCounts { n: usize, c: usize, k: usize },
    #[error("no ground truth for candidate ({problem_id:?}, {candidate_id})")]
    MissingTruth { problem_id: String, candidate_id: u64 },
    #[error("candidate ({problem_id:?}, {candidate_id}) references an unknown problem")]
    UnknownProblem { problem_id: String, candidate_id: u64 },
    #[error("k must be positive")]
    InvalidK,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One problem's candidates, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub problem_id: String,
    pub candidate_ids: Vec<u64>,
    pub scores: Vec<f64>,
}

/// Ground-truth outcome per problem and candidate.
pub type Truth = BTreeMap<String, BTreeMap<u64, OutcomeClass>>;

pub fn truth_from_records(records: &[ExecutionRecord]) -> Truth {
    let mut t = Truth::new();
    for r in records {
        t.entry(r.problem_id.clone())
            .or_default()
            .insert(r.candidate_id, r.outcome);
    }
    t
}

/// Sorts one problem's scores descending, ties by ascending candidate id.
/// NaN scores sort last.
pub fn rank_candidates(scores: &[ScoredCandidate]) -> Result<RankedList, EvalError> {
    let first = scores.first().ok_or(EvalError::EmptyList)?;
    if let Some(other) = scores.iter().find(|s| s.problem_id != first.problem_id) {
        return Err(EvalError::MixedProblems(
            first.problem_id.clone(),
            other.problem_id.clone(),
        ));
    }
    let mut order: Vec<&ScoredCandidate> = scores.iter().collect();
    order.sort_by(|a, b| {
        let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
        key(b.score)
            .total_cmp(&key(a.score))
            .then(a.candidate_id.cmp(&b.candidate_id))
    });
    Ok(RankedList {
        problem_id: first.problem_id.clone(),
        candidate_ids: order.iter().map(|s| s.candidate_id).collect(),
        scores: order.iter().map(|s| s.score).collect(),
    })
}

/// Groups scores by problem and ranks each group, in problem-id order.
pub fn rank_all(scores: &[ScoredCandidate]) -> Result<Vec<RankedList>, EvalError> {
    let mut groups: BTreeMap<&str, Vec<ScoredCandidate>> = BTreeMap::new();
    for s in scores {
        groups.entry(&s.problem_id).or_default().push(s.clone());
    }
    groups.values().map(|g| rank_candidates(g)).collect()
}

/// Scores every candidate from its problem description and source, using
/// up to `workers` threads. Output is sorted by (problem_id, candidate_id).
pub fn score_candidates<S: CandidateScorer>(
    scorer: &S,
    problems: &[Problem],
    candidates: &[Candidate],
    workers: usize,
) -> Result<Vec<ScoredCandidate>, EvalError> {
    let by_id = index_problems(problems);
    let jobs: Vec<(&Problem, &Candidate)> = candidates
        .iter()
        .map(|c| {
            by_id
                .get(c.problem_id.as_str())
                .map(|p| (*p, c))
                .ok_or_else(|| EvalError::UnknownProblem {
                    problem_id: c.problem_id.clone(),
                    candidate_id: c.candidate_id,
                })
        })
        .collect::<Result<_, _>>()?;
    let run = |(p, c): &(&Problem, &Candidate)| -> Result<ScoredCandidate, EvalError> {
        Ok(ScoredCandidate {
            problem_id: c.problem_id.clone(),
            candidate_id: c.candidate_id,
            score: scorer.score(&p.description, &c.source)?,
        })
    };
    let mut out: Vec<ScoredCandidate> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| ModelError::Config(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run).collect::<Result<_, _>>())?
    } else {
        jobs.iter().map(run).collect::<Result<_, _>>()?
    };
    out.sort_by(|a, b| {
        (a.problem_id.as_str(), a.candidate_id).cmp(&(b.problem_id.as_str(), b.candidate_id))
    });
    Ok(out)
}

fn check_counts(n: usize, c: usize, k: usize) -> Result<(), EvalError> {
    if c > n || k == 0 || k > n {
        return Err(EvalError::InvalidCounts { n, c, k });
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// `1 - C(n-c, k) / C(n, k)` as an exact rational.
pub fn pass_at_k_exact(n: usize, c: usize, k: usize) -> Result<BigRational, EvalError> {
    check_counts(n, c, k)?;
    let miss = BigRational::new(binomial(n - c, k), binomial(n, k));
    Ok(BigRational::one() - miss)
}

/// Probability that `k` candidates drawn without replacement from `n`, of
/// which `c` are correct, include a correct one. Computed exactly and
/// rounded once.
pub fn pass_at_k_random(n: usize, c: usize, k: usize) -> Result<f64, EvalError> {
    Ok(pass_at_k_exact(n, c, k)?.to_f64().unwrap_or(f64::NAN))
}

/// The same quantity in floating point as `1 - prod_{i<k} (n-c-i)/(n-i)`,
/// which never forms a binomial coefficient.
pub fn pass_at_k_product<T: num_traits::Float + num_traits::FromPrimitive>(
    n: usize,
    c: usize,
    k: usize,
) -> Result<T, EvalError> {
    check_counts(n, c, k)?;
    if n - c < k {
        return Ok(T::one());
    }
    let f = |v: usize| T::from_usize(v).unwrap_or_else(T::nan);
    let mut miss = T::one();
    for i in 0..k {
        miss = miss * f(n - c - i) / f(n - i);
    }
    Ok(T::one() - miss)
}

/// 1 when any of the top `min(k, n)` candidates is correct.
pub fn pass_at_k_ranked(
    ranked: &RankedList,
    truth: &BTreeMap<u64, OutcomeClass>,
    k: usize,
) -> Result<u8, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let mut hit = 0;
    for (i, id) in ranked.candidate_ids.iter().enumerate() {
        let outcome = truth.get(id).ok_or_else(|| EvalError::MissingTruth {
            problem_id: ranked.problem_id.clone(),
            candidate_id: *id,
        })?;
        if i < k && *outcome == OutcomeClass::Correct {
            hit = 1;
        }
    }
    Ok(hit)
}

/// Problems with at least one correct candidate, in input order.
pub fn filter_solved<'a>(problem_ids: &[&'a str], truth: &Truth) -> Vec<&'a str> {
    problem_ids
        .iter()
        .copied()
        .filter(|p| {
            truth
                .get(*p)
                .is_some_and(|m| m.values().any(|o| *o == OutcomeClass::Correct))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMetric {
    pub k: usize,
    pub random_pass_at_k: f64,
    pub ranked_pass_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub n_problems: usize,
    pub metrics: Vec<KMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_problems: usize,
    pub solved_only: bool,
    pub metrics: Vec<KMetric>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub by_difficulty: Option<BTreeMap<String, Breakdown>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn metrics(lists: &[&RankedList], truth: &Truth, ks: &[usize]) -> Result<Vec<KMetric>, EvalError> {
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 {
            return Err(EvalError::InvalidK);
        }
        let mut random = 0.0;
        let mut ranked = 0.0;
        for list in lists {
            let t = &truth[&list.problem_id];
            let n = list.candidate_ids.len();
            let c = list
                .candidate_ids
                .iter()
                .filter(|id| t.get(id) == Some(&OutcomeClass::Correct))
                .count();
            random += pass_at_k_random(n, c, k.min(n))?;
            ranked += f64::from(pass_at_k_ranked(list, t, k)?);
        }
        let denom = lists.len().max(1) as f64;
        out.push(KMetric {
            k,
            random_pass_at_k: random / denom,
            ranked_pass_at_k: ranked / denom,
        });
    }
    Ok(out)
}

/// Averages ranked and random Pass@k over the ranked problems. A problem
/// with fewer than `k` candidates counts with `k = n`.
pub fn evaluate(
    ranked: &[RankedList],
    truth: &Truth,
    ks: &[usize],
    solved_only: bool,
    difficulty: Option<&BTreeMap<String, Difficulty>>,
) -> Result<EvalReport, EvalError> {
    let mut lists: Vec<&RankedList> = ranked.iter().collect();
    lists.sort_by(|a, b| a.problem_id.cmp(&b.problem_id));
    for l in &lists {
        if !truth.contains_key(&l.problem_id) {
            return Err(EvalError::MissingTruth {
                problem_id: l.problem_id.clone(),
                candidate_id: l.candidate_ids.first().copied().unwrap_or(0),
            });
        }
    }
    if solved_only {
        let ids: Vec<&str> = lists.iter().map(|l| l.problem_id.as_str()).collect();
        let keep = filter_solved(&ids, truth);
        lists.retain(|l| keep.contains(&l.problem_id.as_str()));
    }
    let by_difficulty = match difficulty {
        None => None,
        Some(map) => {
            let mut groups: BTreeMap<String, Vec<&RankedList>> = BTreeMap::new();
            for l in &lists {
                if let Some(d) = map.get(&l.problem_id) {
                    groups.entry(d.to_string()).or_default().push(l);
                }
            }
            let mut out = BTreeMap::new();
            for (d, g) in groups {
                out.insert(
                    d,
                    Breakdown {
                        n_problems: g.len(),
                        metrics: metrics(&g, truth, ks)?,
                    },
                );
            }
            Some(out)
        }
    };
    Ok(EvalReport {
        n_problems: lists.len(),
        solved_only,
        metrics: metrics(&lists, truth, ks)?,
        by_difficulty,
        config_hash: None,
    })
}

/// Plain-text table of a report, columns aligned.
pub fn render_report(report: &EvalReport) -> String {
    let mut rows: Vec<[String; 5]> = vec![[
        "group".into(),
        "problems".into(),
        "k".into(),
        "random".into(),
        "ranked".into(),
    ]];
    let mut push = |group: &str, n: usize, ms: &[KMetric]| {
        for m in ms {
            rows.push([
                group.to_string(),
                n.to_string(),
                m.k.to_string(),
                format!("{:.4}", m.random_pass_at_k),
                format!("{:.4}", m.ranked_pass_at_k),
            ]);
        }
    };
    push("all", report.n_problems, &report.metrics);
    if let Some(by) = &report.by_difficulty {
        for (d, b) in by {
            push(d, b.n_problems, &b.metrics);
        }
    }
    let widths: Vec<usize> = (0..5)
        .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "solved_only: {}{}",
        report.solved_only,
        report
            .config_hash
            .as_ref()
            .map(|h| format!("  config: {h}"))
            .unwrap_or_default()
    );
    for r in &rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                if i == 0 {
                    format!("{cell:<w$}", w = widths[i])
                } else {
                    format!("{cell:>w$}", w = widths[i])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}
