//! Adaptive compression: rank sentences with the encoder, then grow the
//! selected prefix (sizes 1, 1+step, 1+2·step, …) until the evaluator says
//! `<EVI>` or a piece, token or availability limit stops growth.

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{count_tokens, QuestionRecord, SentenceUnit, TokenizerConfig};
use crate::encoder::EncoderModel;
use crate::evaluator::{Evaluator, EvaluatorError, Probe, Verdict};
use crate::par;

/// Sentences in descending score order, ties broken by document rank and
/// then position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEvidence {
    pub items: Vec<(SentenceUnit, f64)>,
}

impl RankedEvidence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &SentenceUnit> {
        self.items.iter().map(|(s, _)| s)
    }

    /// Orders arbitrary scored sentences by the ranking contract.
    pub fn from_scored(mut items: Vec<(SentenceUnit, f64)>) -> Self {
        items.sort_by(|(a, sa), (b, sb)| {
            sb.total_cmp(sa)
                .then(a.doc_rank.cmp(&b.doc_rank))
                .then(a.position.cmp(&b.position))
        });
        Self { items }
    }
}

pub fn rank_sentences(
    model: &EncoderModel,
    question: &str,
    sentences: Vec<SentenceUnit>,
) -> RankedEvidence {
    let texts: Vec<&str> = sentences.iter().map(|s| s.text.as_str()).collect();
    let scores = model.score_all(question, &texts);
    RankedEvidence::from_scored(sentences.into_iter().zip(scores).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcatOrder {
    /// Order of selection, i.e. descending score.
    #[default]
    Selection,
    /// Original (document rank, position) order.
    Document,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionLimits {
    pub max_pieces: usize,
    pub step: usize,
    pub max_tokens: Option<usize>,
    pub order: ConcatOrder,
}

impl Default for CompressionLimits {
    fn default() -> Self {
        Self {
            max_pieces: 20,
            step: 4,
            max_tokens: None,
            order: ConcatOrder::Selection,
        }
    }
}

impl CompressionLimits {
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.max_pieces == 0 {
            errors.push("limits.max_pieces must be positive".to_owned());
        }
        if self.step == 0 {
            errors.push("limits.step must be positive".to_owned());
        }
        if self.step > self.max_pieces {
            errors.push(format!(
                "limits.step ({}) must not exceed limits.max_pieces ({})",
                self.step, self.max_pieces
            ));
        }
        if self.max_tokens == Some(0) {
            errors.push("limits.max_tokens must be positive when set".to_owned());
        }
        errors
    }

    /// Most evaluator calls a single compression can make.
    pub fn max_calls(&self) -> usize {
        (self.max_pieces - 1).div_ceil(self.step) + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StopReason {
    Evidential,
    PieceLimit,
    TokenLimit,
    Exhausted,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Evidential => "EVIDENTIAL",
            StopReason::PieceLimit => "PIECE_LIMIT",
            StopReason::TokenLimit => "TOKEN_LIMIT",
            StopReason::Exhausted => "EXHAUSTED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionResult {
    pub qid: String,
    /// A prefix of the ranking, in selection order.
    pub selected: Vec<SentenceUnit>,
    pub text: String,
    pub verdicts: Vec<Verdict>,
    pub stop_reason: StopReason,
    pub token_count: usize,
    pub evaluator_calls: usize,
}

/// One line of the compressor output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionRow {
    pub qid: String,
    pub selected_sids: Vec<String>,
    pub text: String,
    pub tokens: usize,
    pub stop_reason: StopReason,
    pub evaluator_calls: usize,
}

impl CompressionResult {
    pub fn row(&self) -> CompressionRow {
        CompressionRow {
            qid: self.qid.clone(),
            selected_sids: self.selected.iter().map(|s| s.id.clone()).collect(),
            text: self.text.clone(),
            tokens: self.token_count,
            stop_reason: self.stop_reason,
            evaluator_calls: self.evaluator_calls,
        }
    }
}

#[derive(Debug, Error)]
pub enum CompressError {
    #[error("question {qid}: no sentences to compress")]
    NoSentences { qid: String },
    #[error("question {qid}: evaluator failed after {} calls: {source}", .partial.evaluator_calls)]
    Evaluator {
        qid: String,
        /// Trace up to the failing call; its stop reason is provisional.
        partial: Box<CompressionResult>,
        source: EvaluatorError,
    },
    #[error("evaluator was built on encoder {evaluator} but the compressor uses {encoder}")]
    FingerprintMismatch { evaluator: String, encoder: String },
}

fn join_selected(selected: &[SentenceUnit], order: ConcatOrder) -> String {
    let mut refs: Vec<&SentenceUnit> = selected.iter().collect();
    if order == ConcatOrder::Document {
        refs.sort_by_key(|s| (s.doc_rank, s.position));
    }
    refs.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ")
}

pub fn adaptive_compress(
    record: &QuestionRecord,
    ranked: &RankedEvidence,
    evaluator: &dyn Evaluator,
    limits: &CompressionLimits,
    tokenizer: &TokenizerConfig,
) -> Result<CompressionResult, CompressError> {
    if ranked.is_empty() {
        return Err(CompressError::NoSentences {
            qid: record.id.clone(),
        });
    }
    let mut result = CompressionResult {
        qid: record.id.clone(),
        selected: Vec::new(),
        text: String::new(),
        verdicts: Vec::new(),
        stop_reason: StopReason::TokenLimit,
        token_count: 0,
        evaluator_calls: 0,
    };

    // Adds ranked pieces one at a time up to `target`; returns how many fit.
    let grow = |result: &mut CompressionResult, target: usize| -> usize {
        let mut added = 0;
        while result.selected.len() < target {
            let next = &ranked.items[result.selected.len()].0;
            result.selected.push(next.clone());
            let text = join_selected(&result.selected, limits.order);
            let tokens = count_tokens(&text, tokenizer);
            if limits.max_tokens.is_some_and(|cap| tokens > cap) {
                result.selected.pop();
                break;
            }
            result.text = text;
            result.token_count = tokens;
            added += 1;
        }
        added
    };

    if grow(&mut result, 1) == 0 {
        // even the top sentence is over budget
        return Ok(result);
    }
    loop {
        let pieces: Vec<&str> = result.selected.iter().map(|s| s.text.as_str()).collect();
        let verdict = evaluator.assess(&Probe {
            question: &record.question,
            gold_answers: &record.gold_answers,
            pieces: &pieces,
            text: &result.text,
        });
        result.evaluator_calls += 1;
        let verdict = match verdict {
            Ok(v) => v,
            Err(source) => {
                return Err(CompressError::Evaluator {
                    qid: record.id.clone(),
                    partial: Box::new(result),
                    source,
                })
            }
        };
        result.verdicts.push(verdict);
        if verdict.is_evi() {
            result.stop_reason = StopReason::Evidential;
            return Ok(result);
        }
        let n = result.selected.len();
        if n >= limits.max_pieces {
            result.stop_reason = StopReason::PieceLimit;
            return Ok(result);
        }
        if n >= ranked.len() {
            result.stop_reason = StopReason::Exhausted;
            return Ok(result);
        }
        let target = (n + limits.step).min(limits.max_pieces).min(ranked.len());
        if grow(&mut result, target) == 0 {
            result.stop_reason = StopReason::TokenLimit;
            return Ok(result);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub qid: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompressionSummary {
    pub records: usize,
    pub compressed: usize,
    pub failed: usize,
    pub mean_tokens: f64,
    pub median_tokens: f64,
    pub total_evaluator_calls: usize,
    pub mean_evaluator_calls: f64,
    pub stop_reasons: BTreeMap<StopReason, usize>,
    /// Summed per-record wall clock, seconds.
    pub ranking_seconds: f64,
    pub compression_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompressionRun {
    pub results: Vec<CompressionResult>,
    pub failures: Vec<RecordFailure>,
    pub summary: CompressionSummary,
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}

pub fn summarize(results: &[CompressionResult], failed: usize) -> CompressionSummary {
    let n = results.len();
    let mut tokens: Vec<f64> = results.iter().map(|r| r.token_count as f64).collect();
    let total_calls: usize = results.iter().map(|r| r.evaluator_calls).sum();
    let mut stop_reasons = BTreeMap::new();
    for r in results {
        *stop_reasons.entry(r.stop_reason).or_insert(0) += 1;
    }
    let mean = |sum: f64| if n == 0 { 0.0 } else { sum / n as f64 };
    CompressionSummary {
        records: n + failed,
        compressed: n,
        failed,
        mean_tokens: mean(tokens.iter().sum()),
        median_tokens: median(&mut tokens),
        total_evaluator_calls: total_calls,
        mean_evaluator_calls: mean(total_calls as f64),
        stop_reasons,
        ranking_seconds: 0.0,
        compression_seconds: 0.0,
    }
}

/// Ranks and compresses every record, concurrently across records.
///
/// In strict mode the first failing record (in input order) aborts the run;
/// otherwise failures are collected and the rest still compress.
pub fn compress_dataset(
    records: &[QuestionRecord],
    model: &EncoderModel,
    evaluator: &dyn Evaluator,
    limits: &CompressionLimits,
    tokenizer: &TokenizerConfig,
    strict: bool,
) -> Result<CompressionRun, CompressError> {
    if let Some(fp) = evaluator.encoder_fingerprint() {
        let enc = model.fingerprint();
        if fp != enc {
            return Err(CompressError::FingerprintMismatch {
                evaluator: fp,
                encoder: enc,
            });
        }
    }
    let outcomes = par::map(records, |record| {
        let t0 = Instant::now();
        let ranked = rank_sentences(model, &record.question, record.sentences(tokenizer));
        let t1 = Instant::now();
        let out = adaptive_compress(record, &ranked, evaluator, limits, tokenizer);
        (out, t1 - t0, t1.elapsed())
    });

    let mut results = Vec::with_capacity(records.len());
    let mut failures = Vec::new();
    let (mut rank_time, mut comp_time) = (Duration::ZERO, Duration::ZERO);
    for (out, rt, ct) in outcomes {
        rank_time += rt;
        comp_time += ct;
        match out {
            Ok(r) => results.push(r),
            Err(e) if strict => return Err(e),
            Err(e) => {
                let qid = match &e {
                    CompressError::NoSentences { qid } | CompressError::Evaluator { qid, .. } => {
                        qid.clone()
                    }
                    CompressError::FingerprintMismatch { .. } => String::new(),
                };
                log::warn!("{e}");
                failures.push(RecordFailure {
                    qid,
                    message: e.to_string(),
                });
            }
        }
    }
    let mut summary = summarize(&results, failures.len());
    summary.ranking_seconds = rank_time.as_secs_f64();
    summary.compression_seconds = comp_time.as_secs_f64();
    Ok(CompressionRun {
        results,
        failures,
        summary,
    })
}

/// Checks the structural contract of a result against its ranking.
pub fn check_result(
    result: &CompressionResult,
    ranked: &RankedEvidence,
    limits: &CompressionLimits,
    tokenizer: &TokenizerConfig,
) -> Result<(), String> {
    let prefix: Vec<&str> = ranked.sentences().take(result.selected.len()).map(|s| s.id.as_str()).collect();
    let got: Vec<&str> = result.selected.iter().map(|s| s.id.as_str()).collect();
    if prefix != got {
        return Err(format!("selection {got:?} is not a ranking prefix {prefix:?}"));
    }
    let unique: HashSet<&str> = got.iter().copied().collect();
    if unique.len() != got.len() {
        return Err("duplicate selected sentence".into());
    }
    if result.token_count != count_tokens(&result.text, tokenizer) {
        return Err("token_count disagrees with text".into());
    }
    if result.text != join_selected(&result.selected, limits.order) {
        return Err("text is not the joined selection".into());
    }
    if let Some(cap) = limits.max_tokens {
        if result.token_count > cap {
            return Err(format!("{} tokens over budget {cap}", result.token_count));
        }
    }
    if result.selected.len() > limits.max_pieces {
        return Err("over piece limit".into());
    }
    if result.evaluator_calls != result.verdicts.len() || result.evaluator_calls > limits.max_calls() {
        return Err(format!("bad call count {}", result.evaluator_calls));
    }
    let last_evi = result.verdicts.last().is_some_and(|v| v.is_evi());
    let earlier_not = result.verdicts.iter().rev().skip(1).all(|v| !v.is_evi());
    match result.stop_reason {
        StopReason::Evidential if !(last_evi && earlier_not) => {
            Err("EVIDENTIAL without a final lone <EVI>".into())
        }
        StopReason::Evidential => Ok(()),
        _ if result.verdicts.iter().any(|v| v.is_evi()) => {
            Err(format!("{} after an <EVI>", result.stop_reason.as_str()))
        }
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DocumentRecord;
    use std::sync::atomic::{AtomicUsize, Ordering};

    /// `<EVI>` once at least `need` pieces are selected.
    struct AtLeast {
        need: usize,
        calls: AtomicUsize,
    }

    impl AtLeast {
        fn new(need: usize) -> Self {
            Self {
                need,
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl Evaluator for AtLeast {
        fn assess(&self, probe: &Probe<'_>) -> Result<Verdict, EvaluatorError> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            Ok(Verdict::from_bool(probe.pieces.len() >= self.need))
        }
        fn name(&self) -> &'static str {
            "at_least"
        }
    }

    fn unit(doc_rank: usize, position: usize, text: &str) -> SentenceUnit {
        SentenceUnit {
            id: format!("d{doc_rank}:{position}"),
            doc_id: format!("d{doc_rank}"),
            doc_rank,
            position,
            text: text.to_owned(),
            char_span: (0, text.len()),
            token_count: count_tokens(text, &TokenizerConfig::default()),
        }
    }

    fn ranked(n: usize) -> RankedEvidence {
        RankedEvidence::from_scored(
            (0..n)
                .map(|i| (unit(0, i, &format!("piece number {i}")), (n - i) as f64))
                .collect(),
        )
    }

    fn record() -> QuestionRecord {
        QuestionRecord {
            id: "q".into(),
            question: "what?".into(),
            gold_answers: vec!["x".into()],
            documents: vec![],
        }
    }

    fn run(need: usize, n: usize, limits: &CompressionLimits) -> CompressionResult {
        let tok = TokenizerConfig::default();
        let r = ranked(n);
        let res = adaptive_compress(&record(), &r, &AtLeast::new(need), limits, &tok).unwrap();
        check_result(&res, &r, limits, &tok).unwrap();
        res
    }

    #[test]
    fn ranking_order_and_ties() {
        let r = RankedEvidence::from_scored(vec![
            (unit(0, 0, "a"), 0.9),
            (unit(0, 1, "b"), 0.1),
            (unit(0, 2, "c"), 0.5),
        ]);
        let order: Vec<&str> = r.sentences().map(|s| s.text.as_str()).collect();
        assert_eq!(order, ["a", "c", "b"]);

        let r = RankedEvidence::from_scored(vec![(unit(2, 0, "b"), 0.3), (unit(1, 5, "a"), 0.3)]);
        assert_eq!(r.items[0].0.text, "a");
    }

    #[test]
    fn two_step_trace() {
        let res = run(5, 30, &CompressionLimits::default());
        assert_eq!(res.selected.len(), 5);
        assert_eq!(res.evaluator_calls, 2);
        assert_eq!(res.stop_reason, StopReason::Evidential);
        assert_eq!(res.verdicts, [Verdict::Not, Verdict::Evi]);
    }

    #[test]
    fn immediate_accept() {
        let res = run(1, 30, &CompressionLimits::default());
        assert_eq!(res.selected.len(), 1);
        assert_eq!(res.evaluator_calls, 1);
    }

    #[test]
    fn piece_limit_growth_is_clipped() {
        let eval = AtLeast::new(usize::MAX);
        let r = ranked(100);
        let tok = TokenizerConfig::default();
        let limits = CompressionLimits::default();
        let res = adaptive_compress(&record(), &r, &eval, &limits, &tok).unwrap();
        assert_eq!(res.selected.len(), 20);
        assert_eq!(res.stop_reason, StopReason::PieceLimit);
        // sizes 1, 5, 9, 13, 17, 20
        assert_eq!(res.evaluator_calls, 6);
        assert_eq!(limits.max_calls(), 6);
    }

    #[test]
    fn exhausted_when_ranking_runs_out() {
        let res = run(usize::MAX, 7, &CompressionLimits::default());
        assert_eq!(res.selected.len(), 7);
        assert_eq!(res.stop_reason, StopReason::Exhausted);
        assert_eq!(res.evaluator_calls, 3);
    }

    #[test]
    fn token_budget_is_respected() {
        // every piece is 3 tokens
        let limits = CompressionLimits {
            max_tokens: Some(10),
            ..Default::default()
        };
        let res = run(usize::MAX, 50, &limits);
        assert_eq!(res.selected.len(), 3);
        assert_eq!(res.token_count, 9);
        assert_eq!(res.stop_reason, StopReason::TokenLimit);

        let tight = CompressionLimits {
            max_tokens: Some(2),
            ..Default::default()
        };
        let res = run(1, 50, &tight);
        assert!(res.selected.is_empty());
        assert_eq!(res.evaluator_calls, 0);
        assert_eq!(res.stop_reason, StopReason::TokenLimit);
    }

    #[test]
    fn document_order_concatenation() {
        let r = RankedEvidence::from_scored(vec![
            (unit(1, 0, "later"), 0.9),
            (unit(0, 3, "earlier"), 0.5),
        ]);
        let limits = CompressionLimits {
            order: ConcatOrder::Document,
            ..Default::default()
        };
        let tok = TokenizerConfig::default();
        let res = adaptive_compress(&record(), &r, &AtLeast::new(2), &limits, &tok).unwrap();
        assert_eq!(res.text, "earlier later");
        assert_eq!(res.selected[0].text, "later");
        check_result(&res, &r, &limits, &tok).unwrap();
    }

    #[test]
    fn limits_validation() {
        assert!(CompressionLimits::default().validate().is_empty());
        let bad = CompressionLimits {
            max_pieces: 2,
            step: 4,
            max_tokens: Some(0),
            ..Default::default()
        };
        assert_eq!(bad.validate().len(), 2);
    }

    #[test]
    fn dataset_summary_and_empty_records() {
        let model = EncoderModel::random(4, 128, 0, 0.5, 3);
        let tok = TokenizerConfig::default();
        let doc = |id: &str, body: &str| DocumentRecord {
            id: id.into(),
            title: None,
            body: body.into(),
        };
        let records = vec![
            QuestionRecord {
                documents: vec![doc("a", "One here. Two there. Three everywhere.")],
                ..record()
            },
            QuestionRecord {
                id: "empty".into(),
                documents: vec![],
                ..record()
            },
        ];
        let eval = AtLeast::new(2);
        let run = compress_dataset(&records, &model, &eval, &Default::default(), &tok, false).unwrap();
        assert_eq!(run.results.len(), 1);
        assert_eq!(run.failures[0].qid, "empty");
        assert_eq!(run.summary.records, 2);
        assert_eq!(run.summary.mean_tokens, run.results[0].token_count as f64);
        assert!(compress_dataset(&records, &model, &eval, &Default::default(), &tok, true).is_err());

        let empty = compress_dataset(&[], &model, &eval, &Default::default(), &tok, true).unwrap();
        assert!(empty.results.is_empty());
        assert_eq!(empty.summary, CompressionSummary::default());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&mut []), 0.0);
    }
}
