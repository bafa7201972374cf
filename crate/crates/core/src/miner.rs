//! Hierarchical evidentiality labeling.
//!
//! For one question with sentences `S`:
//!
//! 1. Ask closed-book. If the oracle is already correct, no sentence can be
//!    shown necessary and the whole question stays [`Unlabeled`].
//! 2. Ask with each sentence alone. Correct answers mark [`Strong`] evidence.
//! 3. Pick an anchor from the strong set. Every other sentence is probed with
//!    the context "sentence, then anchor": still correct means the sentence
//!    does not interfere ([`Weak`]), otherwise it is a [`Distractor`].
//! 4. Without any strong sentence there is no anchor, and the non-strong
//!    sentences stay [`Unlabeled`].
//!
//! At most `2·|S| + 1` oracle calls are made per question.
//!
//! [`Unlabeled`]: EvidentialityLabel::Unlabeled
//! [`Strong`]: EvidentialityLabel::Strong
//! [`Weak`]: EvidentialityLabel::Weak
//! [`Distractor`]: EvidentialityLabel::Distractor

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QuestionRecord, SentenceUnit, TokenizerConfig};
use crate::oracle::{is_correct, MatchMode, Oracle, OracleError, OracleRequest, TemplateId};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvidentialityLabel {
    Strong,
    Weak,
    Distractor,
    Unlabeled,
}

impl EvidentialityLabel {
    pub const ALL: [EvidentialityLabel; 4] = [
        EvidentialityLabel::Strong,
        EvidentialityLabel::Weak,
        EvidentialityLabel::Distractor,
        EvidentialityLabel::Unlabeled,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvidentialityLabel::Strong => "STRONG",
            EvidentialityLabel::Weak => "WEAK",
            EvidentialityLabel::Distractor => "DISTRACTOR",
            EvidentialityLabel::Unlabeled => "UNLABELED",
        }
    }
}

/// Which strong sentences follow the candidate in an interference probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorPolicy {
    /// The first strong sentence in document/sentence order.
    #[default]
    First,
    /// All strong sentences, in order.
    AllStrong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinerConfig {
    pub anchor: AnchorPolicy,
    pub match_mode: MatchMode,
    pub template: TemplateId,
}

#[derive(Debug, Error)]
pub enum MineError {
    #[error("question {qid}: no sentences to label")]
    NoSentences { qid: String },
    #[error("question {qid}: {source}")]
    Oracle {
        qid: String,
        #[source]
        source: OracleError,
    },
    #[error("labels file: {0}")]
    Io(#[from] std::io::Error),
    #[error("labels file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Oracle answers behind one sentence's label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceDiagnostics {
    /// Answer with the sentence as the only context.
    pub alone: Option<String>,
    /// Answer with the sentence followed by the anchor.
    pub with_anchor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceLabel {
    pub sid: String,
    pub label: EvidentialityLabel,
    #[serde(default)]
    pub diagnostics: SentenceDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinedQuestion {
    pub qid: String,
    pub closed_book_correct: bool,
    pub has_strong: bool,
    /// One entry per sentence, in sentence order.
    pub labels: Vec<SentenceLabel>,
    pub closed_book_answer: Option<String>,
    pub oracle_calls: usize,
}

impl MinedQuestion {
    pub fn count(&self, label: EvidentialityLabel) -> usize {
        self.labels.iter().filter(|l| l.label == label).count()
    }

    pub fn label_of(&self, sid: &str) -> Option<EvidentialityLabel> {
        self.labels.iter().find(|l| l.sid == sid).map(|l| l.label)
    }

    /// Usable for encoder training.
    pub fn is_trainable(&self) -> bool {
        self.has_strong && !self.closed_book_correct
    }
}

/// One row of the labels file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRow {
    pub qid: String,
    pub sid: String,
    pub label: EvidentialityLabel,
    pub closed_book_correct: bool,
    pub has_strong: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinedDataset {
    pub questions: Vec<MinedQuestion>,
}

impl MinedDataset {
    pub fn rows(&self) -> Vec<LabelRow> {
        self.questions
            .iter()
            .flat_map(|q| {
                q.labels.iter().map(move |l| LabelRow {
                    qid: q.qid.clone(),
                    sid: l.sid.clone(),
                    label: l.label,
                    closed_book_correct: q.closed_book_correct,
                    has_strong: q.has_strong,
                })
            })
            .collect()
    }

    /// Regroups rows by question, keeping first-appearance order.
    pub fn from_rows(rows: impl IntoIterator<Item = LabelRow>) -> Self {
        let mut order: Vec<String> = Vec::new();
        let mut by_q: HashMap<String, MinedQuestion> = HashMap::new();
        for row in rows {
            let q = by_q.entry(row.qid.clone()).or_insert_with(|| {
                order.push(row.qid.clone());
                MinedQuestion {
                    qid: row.qid.clone(),
                    closed_book_correct: row.closed_book_correct,
                    has_strong: row.has_strong,
                    labels: Vec::new(),
                    closed_book_answer: None,
                    oracle_calls: 0,
                }
            });
            q.labels.push(SentenceLabel {
                sid: row.sid,
                label: row.label,
                diagnostics: SentenceDiagnostics::default(),
            });
        }
        Self {
            questions: order
                .into_iter()
                .map(|qid| by_q.remove(&qid).expect("inserted above"))
                .collect(),
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        crate::io::write_jsonl(path, &self.rows())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, MineError> {
        let text = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            rows.push(serde_json::from_str(line).map_err(|e| MineError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Ok(Self::from_rows(rows))
    }

    pub fn question(&self, qid: &str) -> Option<&MinedQuestion> {
        self.questions.iter().find(|q| q.qid == qid)
    }

    pub fn label_counts(&self) -> BTreeMap<EvidentialityLabel, usize> {
        let mut counts: BTreeMap<_, _> = EvidentialityLabel::ALL.iter().map(|&l| (l, 0)).collect();
        for q in &self.questions {
            for l in &q.labels {
                *counts.entry(l.label).or_default() += 1;
            }
        }
        counts
    }
}

fn ask(
    oracle: &dyn Oracle,
    cfg: &MinerConfig,
    qid: &str,
    question: &str,
    context: Option<String>,
) -> Result<String, MineError> {
    let request = OracleRequest {
        question: question.to_owned(),
        context,
        template: cfg.template,
    };
    oracle
        .generate(&request)
        .map(|a| a.raw_text)
        .map_err(|source| MineError::Oracle {
            qid: qid.to_owned(),
            source,
        })
}

fn correct(answer: &str, record: &QuestionRecord, cfg: &MinerConfig) -> bool {
    let attempt = crate::oracle::AnswerAttempt {
        raw_text: answer.to_owned(),
        latency: Default::default(),
        source: crate::oracle::AttemptSource::Scripted,
    };
    is_correct(&attempt, &record.gold_answers, cfg.match_mode)
}

/// Labels every sentence of one question.
pub fn mine_question(
    record: &QuestionRecord,
    sentences: &[SentenceUnit],
    oracle: &dyn Oracle,
    cfg: &MinerConfig,
) -> Result<MinedQuestion, MineError> {
    let qid = record.id.as_str();
    if sentences.is_empty() {
        return Err(MineError::NoSentences { qid: qid.to_owned() });
    }
    let unlabeled = |sents: &[SentenceUnit]| -> Vec<SentenceLabel> {
        sents
            .iter()
            .map(|s| SentenceLabel {
                sid: s.id.clone(),
                label: EvidentialityLabel::Unlabeled,
                diagnostics: SentenceDiagnostics::default(),
            })
            .collect()
    };

    let closed = ask(oracle, cfg, qid, &record.question, None)?;
    let mut calls = 1;
    if correct(&closed, record, cfg) {
        return Ok(MinedQuestion {
            qid: qid.to_owned(),
            closed_book_correct: true,
            has_strong: false,
            labels: unlabeled(sentences),
            closed_book_answer: Some(closed),
            oracle_calls: calls,
        });
    }

    let alone: Vec<String> = par::map(sentences, |s| {
        ask(oracle, cfg, qid, &record.question, Some(s.text.clone()))
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    calls += sentences.len();
    let strong: Vec<bool> = alone.iter().map(|a| correct(a, record, cfg)).collect();

    let strong_texts: Vec<&str> = sentences
        .iter()
        .zip(&strong)
        .filter(|(_, &is)| is)
        .map(|(s, _)| s.text.as_str())
        .collect();
    let anchor = match (cfg.anchor, strong_texts.first()) {
        (_, None) => None,
        (AnchorPolicy::First, Some(first)) => Some((*first).to_owned()),
        (AnchorPolicy::AllStrong, Some(_)) => Some(strong_texts.join(" ")),
    };

    let probes: Vec<Option<String>> = match &anchor {
        None => vec![None; sentences.len()],
        Some(anchor) => {
            let idx: Vec<usize> = (0..sentences.len()).filter(|&i| !strong[i]).collect();
            let answers = par::map(&idx, |&i| {
                let context = format!("{} {}", sentences[i].text, anchor);
                ask(oracle, cfg, qid, &record.question, Some(context))
            });
            calls += idx.len();
            let mut out = vec![None; sentences.len()];
            for (i, a) in idx.into_iter().zip(answers) {
                out[i] = Some(a?);
            }
            out
        }
    };

    let labels = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let label = if strong[i] {
                EvidentialityLabel::Strong
            } else {
                match &probes[i] {
                    None => EvidentialityLabel::Unlabeled,
                    Some(a) if correct(a, record, cfg) => EvidentialityLabel::Weak,
                    Some(_) => EvidentialityLabel::Distractor,
                }
            };
            SentenceLabel {
                sid: s.id.clone(),
                label,
                diagnostics: SentenceDiagnostics {
                    alone: Some(alone[i].clone()),
                    with_anchor: probes[i].clone(),
                },
            }
        })
        .collect();

    Ok(MinedQuestion {
        qid: qid.to_owned(),
        closed_book_correct: false,
        has_strong: anchor.is_some(),
        labels,
        closed_book_answer: Some(closed),
        oracle_calls: calls,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MiningStats {
    pub questions: usize,
    pub label_counts: BTreeMap<EvidentialityLabel, usize>,
    pub closed_book_correct: usize,
    pub without_strong: usize,
    /// Questions usable for encoder training.
    pub trainable: usize,
    /// Oracle requests issued per question (cache hits included).
    pub calls_per_question: Vec<(String, usize)>,
    pub total_calls: usize,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub cache_hit_rate: f64,
    pub failures: Vec<(String, String)>,
}

/// Mines every record. Failed questions are reported in the stats and left
/// out of the dataset; the rest is still valid.
pub fn mine_dataset(
    records: &[QuestionRecord],
    oracle: &dyn Oracle,
    cfg: &MinerConfig,
    tokenizer: &TokenizerConfig,
) -> (MinedDataset, MiningStats) {
    let before = oracle.cache_counters().unwrap_or_default();
    let results = par::map(records, |r| {
        let sentences = r.sentences(tokenizer);
        mine_question(r, &sentences, oracle, cfg)
    });
    let after = oracle.cache_counters().unwrap_or_default();

    let mut mined = MinedDataset::default();
    let mut stats = MiningStats::default();
    for (record, result) in records.iter().zip(results) {
        match result {
            Ok(q) => {
                stats.calls_per_question.push((q.qid.clone(), q.oracle_calls));
                stats.total_calls += q.oracle_calls;
                stats.closed_book_correct += q.closed_book_correct as usize;
                stats.without_strong += (!q.closed_book_correct && !q.has_strong) as usize;
                stats.trainable += q.is_trainable() as usize;
                mined.questions.push(q);
            }
            Err(e) => stats.failures.push((record.id.clone(), e.to_string())),
        }
    }
    stats.questions = mined.questions.len();
    stats.label_counts = mined.label_counts();
    stats.cache_hits = after.hits - before.hits;
    stats.cache_misses = after.misses - before.misses;
    let lookups = stats.cache_hits + stats.cache_misses;
    stats.cache_hit_rate = if lookups == 0 {
        0.0
    } else {
        stats.cache_hits as f64 / lookups as f64
    };
    (mined, stats)
}
