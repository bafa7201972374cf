//! Metrics and strategy-comparison benchmarking.
//!
//! A benchmark builds one context per question per strategy, asks the oracle
//! once with it, and scores the answer. Compression (ranking plus selection)
//! and inference (the oracle call) are timed separately with a monotonic
//! clock.

mod metrics;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compressor::{
    adaptive_compress, rank_sentences, CompressError, CompressionLimits, RankedEvidence,
};
use crate::corpus::{count_tokens, QuestionRecord, TokenizerConfig};
use crate::encoder::EncoderModel;
use crate::evaluator::Evaluator;
use crate::miner::{EvidentialityLabel, MinedDataset};
use crate::oracle::{Oracle, OracleError, OracleRequest};
use crate::par;

pub use metrics::{
    compression_ratio_stats, exact_match, f1_word, ndcg_at_k, r20, ratio_stats, RatioStats, R_AT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    /// All retrieved documents, joined with newlines.
    NoCompression,
    /// No context at all.
    ClosedBook,
    /// The `k` best-scoring sentences.
    TopkTruncation,
    /// Every sentence scoring at least `threshold`.
    Threshold,
    /// The adaptive evaluator-gated loop.
    EcoragAdaptive,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::NoCompression => "no_compression",
            StrategyKind::ClosedBook => "closed_book",
            StrategyKind::TopkTruncation => "topk_truncation",
            StrategyKind::Threshold => "threshold",
            StrategyKind::EcoragAdaptive => "ecorag_adaptive",
        }
    }

    pub fn needs_encoder(self) -> bool {
        matches!(
            self,
            StrategyKind::TopkTruncation | StrategyKind::Threshold | StrategyKind::EcoragAdaptive
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub name: String,
    pub kind: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl StrategySpec {
    pub fn new(name: impl Into<String>, kind: StrategyKind) -> Self {
        Self {
            name: name.into(),
            kind,
            k: None,
            threshold: None,
        }
    }

    pub fn topk(name: impl Into<String>, k: usize) -> Self {
        Self {
            k: Some(k),
            ..Self::new(name, StrategyKind::TopkTruncation)
        }
    }

    pub fn threshold(name: impl Into<String>, threshold: f64) -> Self {
        Self {
            threshold: Some(threshold),
            ..Self::new(name, StrategyKind::Threshold)
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        let valid_name = !self.name.is_empty()
            && self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.');
        if !valid_name {
            errors.push(format!(
                "strategy name {:?} must be nonempty [A-Za-z0-9_.-] (it names report files)",
                self.name
            ));
        }
        match self.kind {
            StrategyKind::TopkTruncation => match self.k {
                None => errors.push(format!("strategy {}: topk_truncation needs k", self.name)),
                Some(0) => errors.push(format!("strategy {}: k must be positive", self.name)),
                Some(_) => {}
            },
            StrategyKind::Threshold => match self.threshold {
                None => errors.push(format!("strategy {}: threshold needs threshold", self.name)),
                Some(t) if !t.is_finite() => {
                    errors.push(format!("strategy {}: threshold must be finite", self.name))
                }
                Some(_) => {}
            },
            _ => {}
        }
        if self.k.is_some() && self.kind != StrategyKind::TopkTruncation {
            errors.push(format!("strategy {}: k only applies to topk_truncation", self.name));
        }
        if self.threshold.is_some() && self.kind != StrategyKind::Threshold {
            errors.push(format!("strategy {}: threshold only applies to threshold", self.name));
        }
        errors
    }
}

/// The five standard strategies with the reference parameters.
pub fn default_strategies() -> Vec<StrategySpec> {
    vec![
        StrategySpec::new("closed_book", StrategyKind::ClosedBook),
        StrategySpec::new("no_compression", StrategyKind::NoCompression),
        StrategySpec::topk("topk_20", 20),
        StrategySpec::threshold("threshold_0", 0.0),
        StrategySpec::new("ecorag_adaptive", StrategyKind::EcoragAdaptive),
    ]
}

/// Optional pipeline pieces a benchmark may need.
#[derive(Clone, Copy, Default)]
pub struct Components<'a> {
    pub encoder: Option<&'a EncoderModel>,
    pub evaluator: Option<&'a dyn Evaluator>,
    /// Mined labels; strong sentences are the relevant set for NDCG.
    pub labels: Option<&'a MinedDataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchOptions {
    pub limits: CompressionLimits,
    pub tokenizer: TokenizerConfig,
    pub ndcg_ks: Vec<usize>,
    /// With timing off every duration is reported as zero, so reports from
    /// scripted runs are byte-identical.
    pub record_timing: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            limits: CompressionLimits::default(),
            tokenizer: TokenizerConfig::default(),
            ndcg_ks: vec![1, 5, 10],
            record_timing: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid strategies: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("strategy {strategy} needs {component}, which was not provided")]
    MissingComponent {
        strategy: String,
        component: &'static str,
    },
    #[error("question {qid}: {source}")]
    Oracle { qid: String, source: OracleError },
    #[error(transparent)]
    Compress(#[from] CompressError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRow {
    pub qid: String,
    pub prediction: String,
    pub em: f64,
    pub f1: f64,
    pub tokens: usize,
    /// Evaluator calls made by the adaptive loop; 0 for other strategies.
    pub evaluator_calls: usize,
    pub compression_seconds: f64,
    pub inference_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub compression_time: f64,
    pub inference_time: f64,
    pub total_time: f64,
    /// Questions per second of total time; 0 when untimed.
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub strategy: String,
    pub kind: StrategyKind,
    pub questions: usize,
    #[serde(rename = "EM")]
    pub em: f64,
    #[serde(rename = "F1")]
    pub f1: f64,
    pub mean_tokens: f64,
    /// Encoder-ranking metrics; present when an encoder was supplied.
    pub r20: Option<f64>,
    pub ndcg: BTreeMap<String, f64>,
    pub timing: Timing,
    #[serde(skip)]
    pub rows: Vec<QuestionRow>,
}

fn secs(d: Duration, on: bool) -> f64 {
    if on {
        d.as_secs_f64()
    } else {
        0.0
    }
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}

/// Validates every strategy and its components before any oracle call.
pub fn check_strategies(strategies: &[StrategySpec], components: &Components) -> Result<(), BenchError> {
    let mut errors: Vec<String> = strategies.iter().flat_map(StrategySpec::validate).collect();
    let mut seen = HashSet::new();
    for s in strategies {
        if !seen.insert(s.name.as_str()) {
            errors.push(format!("duplicate strategy name {}", s.name));
        }
    }
    if !errors.is_empty() {
        return Err(BenchError::Invalid(errors));
    }
    for s in strategies {
        if s.kind.needs_encoder() && components.encoder.is_none() {
            return Err(BenchError::MissingComponent {
                strategy: s.name.clone(),
                component: "an encoder",
            });
        }
        if s.kind == StrategyKind::EcoragAdaptive && components.evaluator.is_none() {
            return Err(BenchError::MissingComponent {
                strategy: s.name.clone(),
                component: "an evaluator",
            });
        }
    }
    Ok(())
}

/// Context for one question; `None` means closed-book.
fn build_context(
    spec: &StrategySpec,
    record: &QuestionRecord,
    ranked: Option<&RankedEvidence>,
    components: &Components,
    opts: &BenchOptions,
) -> Result<(Option<String>, usize), BenchError> {
    let join = |items: &mut dyn Iterator<Item = &str>| items.collect::<Vec<_>>().join(" ");
    Ok(match spec.kind {
        StrategyKind::ClosedBook => (None, 0),
        StrategyKind::NoCompression => (Some(record.full_context()), 0),
        StrategyKind::TopkTruncation => {
            let k = spec.k.unwrap_or(0);
            let ranked = ranked.expect("validated");
            (Some(join(&mut ranked.sentences().take(k).map(|s| s.text.as_str()))), 0)
        }
        StrategyKind::Threshold => {
            let t = spec.threshold.unwrap_or(f64::INFINITY);
            let ranked = ranked.expect("validated");
            let mut above = ranked
                .items
                .iter()
                .take_while(|(_, score)| *score >= t)
                .map(|(s, _)| s.text.as_str());
            (Some(join(&mut above)), 0)
        }
        StrategyKind::EcoragAdaptive => {
            let ranked = ranked.expect("validated");
            if ranked.is_empty() {
                (Some(String::new()), 0)
            } else {
                let evaluator = components.evaluator.expect("validated");
                let r = adaptive_compress(record, ranked, evaluator, &opts.limits, &opts.tokenizer)?;
                (Some(r.text), r.evaluator_calls)
            }
        }
    })
}

fn run_strategy(
    spec: &StrategySpec,
    records: &[QuestionRecord],
    oracle: &dyn Oracle,
    components: &Components,
    opts: &BenchOptions,
) -> Result<Vec<QuestionRow>, BenchError> {
    let rows = par::map(records, |record| -> Result<QuestionRow, BenchError> {
        let t0 = Instant::now();
        let ranked = if spec.kind.needs_encoder() {
            let encoder = components.encoder.expect("validated");
            Some(rank_sentences(encoder, &record.question, record.sentences(&opts.tokenizer)))
        } else {
            None
        };
        let (context, evaluator_calls) = build_context(spec, record, ranked.as_ref(), components, opts)?;
        let t1 = Instant::now();
        let request = match &context {
            None => OracleRequest::closed_book(record.question.as_str()),
            Some(c) => OracleRequest::with_context(record.question.as_str(), c.as_str()),
        };
        let attempt = oracle.generate(&request).map_err(|source| BenchError::Oracle {
            qid: record.id.clone(),
            source,
        })?;
        let t2 = Instant::now();
        let prediction = attempt.raw_text;
        Ok(QuestionRow {
            qid: record.id.clone(),
            em: exact_match(&prediction, &record.gold_answers),
            f1: f1_word(&prediction, &record.gold_answers),
            tokens: context
                .as_deref()
                .map_or(0, |c| count_tokens(c, &opts.tokenizer)),
            evaluator_calls,
            compression_seconds: secs(t1 - t0, opts.record_timing),
            inference_seconds: secs(t2 - t1, opts.record_timing),
            prediction,
        })
    });
    rows.into_iter().collect()
}

/// R20 and NDCG@k of the encoder ranking, shared by every strategy.
fn ranking_metrics(
    records: &[QuestionRecord],
    components: &Components,
    opts: &BenchOptions,
) -> (Option<f64>, BTreeMap<String, f64>) {
    let Some(encoder) = components.encoder else {
        return (None, BTreeMap::new());
    };
    let per_q = par::map(records, |record| {
        let ranked = rank_sentences(encoder, &record.question, record.sentences(&opts.tokenizer));
        let texts: Vec<&str> = ranked.sentences().map(|s| s.text.as_str()).collect();
        let hit = r20(&texts, &record.gold_answers);
        let ndcg: Option<Vec<f64>> = components.labels.and_then(|labels| {
            let q = labels.question(&record.id)?;
            let relevant: HashSet<String> = q
                .labels
                .iter()
                .filter(|l| l.label == EvidentialityLabel::Strong)
                .map(|l| l.sid.clone())
                .collect();
            if relevant.is_empty() {
                return None;
            }
            let ids: Vec<&str> = ranked.sentences().map(|s| s.id.as_str()).collect();
            Some(opts.ndcg_ks.iter().map(|&k| ndcg_at_k(&ids, &relevant, k)).collect())
        });
        (hit, ndcg)
    });
    let r = mean(per_q.iter().map(|(h, _)| *h), per_q.len());
    let judged: Vec<&Vec<f64>> = per_q.iter().filter_map(|(_, n)| n.as_ref()).collect();
    let mut ndcg = BTreeMap::new();
    if !judged.is_empty() {
        for (i, k) in opts.ndcg_ks.iter().enumerate() {
            ndcg.insert(
                format!("ndcg@{k}"),
                mean(judged.iter().map(|v| v[i]), judged.len()),
            );
        }
    }
    (Some(r), ndcg)
}

/// Runs every strategy over `records`, in order.
pub fn run_benchmark(
    records: &[QuestionRecord],
    strategies: &[StrategySpec],
    oracle: &dyn Oracle,
    components: Components,
    opts: &BenchOptions,
) -> Result<Vec<EvalReport>, BenchError> {
    check_strategies(strategies, &components)?;
    if opts.ndcg_ks.contains(&0) {
        return Err(BenchError::Invalid(vec!["ndcg_ks entries must be >= 1".into()]));
    }
    let (r20_value, ndcg) = ranking_metrics(records, &components, opts);
    let mut reports = Vec::with_capacity(strategies.len());
    for spec in strategies {
        let rows = run_strategy(spec, records, oracle, &components, opts)?;
        let n = rows.len();
        let compression_time: f64 = rows.iter().map(|r| r.compression_seconds).sum();
        let inference_time: f64 = rows.iter().map(|r| r.inference_seconds).sum();
        let total_time = compression_time + inference_time;
        reports.push(EvalReport {
            strategy: spec.name.clone(),
            kind: spec.kind,
            questions: n,
            em: 100.0 * mean(rows.iter().map(|r| r.em), n),
            f1: 100.0 * mean(rows.iter().map(|r| r.f1), n),
            mean_tokens: mean(rows.iter().map(|r| r.tokens as f64), n),
            r20: r20_value,
            ndcg: ndcg.clone(),
            timing: Timing {
                compression_time,
                inference_time,
                total_time,
                throughput: if total_time > 0.0 { n as f64 / total_time } else { 0.0 },
            },
            rows,
        });
    }
    Ok(reports)
}

/// Plain-text comparison table, one line per strategy.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let width = reports
        .iter()
        .map(|r| r.strategy.len())
        .max()
        .unwrap_or(0)
        .max("strategy".len());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>7}  {:>7}  {:>9}  {:>10}  {:>10}",
        "strategy", "EM", "F1", "tokens", "comp (s)", "infer (s)"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.2}  {:>7.2}  {:>9.1}  {:>10.3}  {:>10.3}",
            r.strategy, r.em, r.f1, r.mean_tokens, r.timing.compression_time, r.timing.inference_time
        );
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Writes `<name>.json` and `<name>.csv` per strategy plus `comparison.txt`.
/// Returns the paths written.
pub fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<Vec<PathBuf>, BenchError> {
    let mut written = Vec::new();
    for r in reports {
        let json = dir.join(format!("{}.json", r.strategy));
        crate::io::write_json(&json, r).map_err(io_err(&json))?;
        written.push(json);

        let csv_path = dir.join(format!("{}.csv", r.strategy));
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &r.rows {
            w.serialize(row)
                .map_err(|e| io_err(&csv_path)(std::io::Error::other(e)))?;
        }
        let bytes = w.into_inner().map_err(|e| io_err(&csv_path)(e.into_error()))?;
        crate::io::write_atomic(&csv_path, &bytes).map_err(io_err(&csv_path))?;
        written.push(csv_path);
    }
    let table = dir.join("comparison.txt");
    crate::io::write_atomic(&table, comparison_table(reports).as_bytes()).map_err(io_err(&table))?;
    written.push(table);
    Ok(written)
}
