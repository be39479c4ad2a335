//! Deduplication, (N, S, E, F) quadruple assembly, tokenization and
//! CLS/GEN sequence encoding.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{index_problems, Candidate, ExecutionRecord, OutcomeClass, Problem, RankSample};
use crate::feedback::{render_feedback, FeedbackError};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const BOS: &str = "[BOS]";
pub const EOS: &str = "[EOS]";
pub const CLS: &str = "[CLS]";
pub const GEN: &str = "[GEN]";
pub const QUERY: &str = "[QUERY]";
pub const CODE: &str = "[CODE]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;
pub const CLS_ID: u32 = 4;
pub const GEN_ID: u32 = 5;
pub const QUERY_ID: u32 = 6;
pub const CODE_ID: u32 = 7;

pub const RESERVED: [&str; 8] = [PAD, UNK, BOS, EOS, CLS, GEN, QUERY, CODE];

pub const DEFAULT_MAX_SEQ_LEN: usize = 512;
pub const DEFAULT_MAX_TARGET_LEN: usize = 128;
pub const DEFAULT_MAX_VOCAB: usize = 8192;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("no execution record for candidate ({problem_id:?}, {candidate_id})")]
    MissingRecord { problem_id: String, candidate_id: u64 },
    #[error("candidate ({problem_id:?}, {candidate_id}) references an unknown problem")]
    UnknownProblem { problem_id: String, candidate_id: u64 },
    #[error("max_vocab must be at least 8 (got {0})")]
    VocabTooSmall(usize),
    #[error("vocabulary file is malformed: {0}")]
    BadVocab(String),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
}

/// Keeps the first occurrence of each source per problem, comparing sources
/// after normalizing line endings to `\n`. Input order is preserved.
pub fn dedup_candidates(candidates: &[Candidate]) -> Vec<Candidate> {
    let mut seen: HashSet<(&str, String)> = HashSet::new();
    candidates
        .iter()
        .filter(|c| {
            let norm = c.source.replace("\r\n", "\n").replace('\r', "\n");
            seen.insert((c.problem_id.as_str(), norm))
        })
        .cloned()
        .collect()
}

/// Joins candidates with their execution records into training quadruples.
pub fn build_rank_samples(
    problems: &[Problem],
    candidates: &[Candidate],
    records: &[ExecutionRecord],
) -> Result<Vec<RankSample>, DatasetError> {
    let by_problem = index_problems(problems);
    let by_key: HashMap<(&str, u64), &ExecutionRecord> = records
        .iter()
        .map(|r| ((r.problem_id.as_str(), r.candidate_id), r))
        .collect();
    candidates
        .iter()
        .map(|c| {
            let problem = by_problem.get(c.problem_id.as_str()).ok_or_else(|| {
                DatasetError::UnknownProblem {
                    problem_id: c.problem_id.clone(),
                    candidate_id: c.candidate_id,
                }
            })?;
            let record = by_key
                .get(&(c.problem_id.as_str(), c.candidate_id))
                .ok_or_else(|| DatasetError::MissingRecord {
                    problem_id: c.problem_id.clone(),
                    candidate_id: c.candidate_id,
                })?;
            let feedback = render_feedback(record.outcome, record.failure_detail.as_ref())?;
            Ok(RankSample {
                problem_id: c.problem_id.clone(),
                candidate_id: c.candidate_id,
                description: problem.description.clone(),
                source: c.source.clone(),
                label: record.outcome,
                feedback,
            })
        })
        .collect()
}

fn is_word_char(ch: char) -> bool {
    ch == '_' || !ch.is_ascii_punctuation()
}

/// Splits on whitespace, then separates every ASCII punctuation character
/// (other than `_`) into its own token. `a+b` becomes `a`, `+`, `b`.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut start = None;
        for (i, ch) in chunk.char_indices() {
            if is_word_char(ch) {
                start.get_or_insert(i);
            } else {
                if let Some(s) = start.take() {
                    out.push(&chunk[s..i]);
                }
                out.push(&chunk[i..i + ch.len_utf8()]);
            }
        }
        if let Some(s) = start {
            out.push(&chunk[s..]);
        }
    }
    out
}

/// Bijective token/id mapping with the eight reserved ids fixed at 0..8.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, DatasetError> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(DatasetError::BadVocab(
                "reserved tokens must occupy ids 0..8".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(DatasetError::BadVocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn ids(&self, text: &str) -> Vec<u32> {
        tokenize(text).into_iter().map(|t| self.id(t)).collect()
    }

    /// Joins the tokens for `ids` with single spaces, skipping reserved ids
    /// other than `[UNK]`.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter(|&&id| id == UNK_ID || id as usize >= RESERVED.len())
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// `vocab.json` content: the token array indexed by id.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.tokens).expect("string array serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DatasetError> {
        let tokens: Vec<String> =
            serde_json::from_str(text).map_err(|e| DatasetError::BadVocab(e.to_string()))?;
        Self::from_tokens(tokens)
    }

    /// Hex SHA-256 over the tokens, each terminated by `\n`.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Keeps the `max_vocab - 8` most frequent tokens of descriptions, sources
/// and feedback; frequency ties are broken lexicographically.
pub fn build_vocab(samples: &[RankSample], max_vocab: usize) -> Result<Vocabulary, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    if max_vocab < RESERVED.len() {
        return Err(DatasetError::VocabTooSmall(max_vocab));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in samples {
        for text in [&s.description, &s.source, &s.feedback] {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, _)| !RESERVED.contains(t))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let tokens = RESERVED
        .iter()
        .map(|t| t.to_string())
        .chain(
            ranked
                .into_iter()
                .take(max_vocab - RESERVED.len())
                .map(|(t, _)| t.to_string()),
        )
        .collect();
    Vocabulary::from_tokens(tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    Cls,
    Gen,
}

impl Variant {
    pub fn tag_id(self) -> u32 {
        match self {
            Variant::Cls => CLS_ID,
            Variant::Gen => GEN_ID,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqLimits {
    pub max_seq_len: usize,
    pub max_target_len: usize,
}

impl Default for SeqLimits {
    fn default() -> Self {
        SeqLimits {
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            max_target_len: DEFAULT_MAX_TARGET_LEN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedSample {
    pub input_ids: Vec<u32>,
    pub label: usize,
    /// `[BOS] feedback [EOS]`.
    pub target_ids: Vec<u32>,
    pub input_len: usize,
    pub target_len: usize,
}

/// Builds `[tag][QUERY] N [CODE] S [EOS]` from pre-tokenized description
/// and source ids, truncating the source tail first and then the
/// description tail to fit `max_seq_len`. The four separators are always
/// kept.
pub fn encode_input(variant: Variant, desc: &[u32], src: &[u32], max_seq_len: usize) -> Vec<u32> {
    let budget = max_seq_len.saturating_sub(4);
    let n_desc = desc.len().min(budget);
    let n_src = src.len().min(budget - n_desc);
    let mut ids = Vec::with_capacity(4 + n_desc + n_src);
    ids.push(variant.tag_id());
    ids.push(QUERY_ID);
    ids.extend_from_slice(&desc[..n_desc]);
    ids.push(CODE_ID);
    ids.extend_from_slice(&src[..n_src]);
    ids.push(EOS_ID);
    ids
}

/// `[BOS] F [EOS]`, capped at `max_target_len` with `[EOS]` forced last.
pub fn encode_target(feedback: &[u32], max_target_len: usize) -> Vec<u32> {
    let keep = feedback.len().min(max_target_len.saturating_sub(2));
    let mut ids = Vec::with_capacity(keep + 2);
    ids.push(BOS_ID);
    ids.extend_from_slice(&feedback[..keep]);
    ids.push(EOS_ID);
    ids
}

pub fn encode(
    sample: &RankSample,
    variant: Variant,
    vocab: &Vocabulary,
    limits: SeqLimits,
) -> EncodedSample {
    let input_ids = encode_input(
        variant,
        &vocab.ids(&sample.description),
        &vocab.ids(&sample.source),
        limits.max_seq_len,
    );
    let target_ids = encode_target(&vocab.ids(&sample.feedback), limits.max_target_len);
    EncodedSample {
        input_len: input_ids.len(),
        target_len: target_ids.len(),
        input_ids,
        label: sample.label.label_id(),
        target_ids,
    }
}

/// CLS and GEN encodings of the same sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairedSample {
    pub cls: EncodedSample,
    pub gen: EncodedSample,
}

pub fn encode_pair(sample: &RankSample, vocab: &Vocabulary, limits: SeqLimits) -> PairedSample {
    PairedSample {
        cls: encode(sample, Variant::Cls, vocab, limits),
        gen: encode(sample, Variant::Gen, vocab, limits),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Deterministic split by problem id: ids are sorted, shuffled with
/// `seed`, and the first `test_fraction` go to test, the next
/// `val_fraction` to validation.
pub fn split_problems(
    problem_ids: &[&str],
    seed: u64,
    val_fraction: f64,
    test_fraction: f64,
) -> BTreeMap<String, Split> {
    let mut ids: Vec<&str> = problem_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = SplitMix64::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let n_val = ((n as f64) * val_fraction).round() as usize;
    ids.into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < n_test {
                Split::Test
            } else if i < n_test + n_val {
                Split::Val
            } else {
                Split::Train
            };
            (id.to_string(), split)
        })
        .collect()
}

/// Class index used by a model with `n_classes` outputs: ternary keeps the
/// frozen coding, binary maps every failure to 1.
pub fn class_index(outcome: OutcomeClass, n_classes: usize) -> usize {
    if n_classes == 2 {
        usize::from(outcome != OutcomeClass::Correct)
    } else {
        outcome.label_id()
    }
}
