use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::EvaluatorError;
use crate::corpus::{QuestionRecord, TokenizerConfig};
use crate::encoder::EncoderModel;
use crate::miner::{EvidentialityLabel, MinedDataset};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorExample {
    pub question: String,
    pub text: String,
    /// Compressor similarity of `text` to `question`.
    pub score: f64,
}

/// `<EVI>` examples from strong sentences and the highest-scoring `<NOT>`
/// examples from weak evidence and distractors, at `1 : ratio`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorTrainSet {
    pub positives: Vec<EvaluatorExample>,
    pub negatives: Vec<EvaluatorExample>,
    /// Negatives missing to reach the ratio.
    pub shortfall: usize,
}

struct Candidate<'a> {
    question: &'a str,
    text: &'a str,
    label: EvidentialityLabel,
    qid: &'a str,
}

/// Builds the evaluator training set.
///
/// With `augment`, each question also contributes concatenated contexts: its
/// first strong sentence followed by the question's top-scoring non-strong
/// sentences (`<EVI>`), and those non-strong sentences alone (`<NOT>`).
pub fn build_trainset(
    mined: &MinedDataset,
    records: &[QuestionRecord],
    encoder: &EncoderModel,
    ratio: usize,
    tokenizer: &TokenizerConfig,
    augment: bool,
) -> Result<EvaluatorTrainSet, EvaluatorError> {
    let by_id: HashMap<&str, &QuestionRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let sentence_texts: Vec<HashMap<String, String>> = par::map(&mined.questions, |q| {
        by_id
            .get(q.qid.as_str())
            .map(|r| r.sentences(tokenizer).into_iter().map(|s| (s.id, s.text)).collect())
            .unwrap_or_default()
    });

    let mut candidates = Vec::new();
    for (q, texts) in mined.questions.iter().zip(&sentence_texts) {
        let Some(record) = by_id.get(q.qid.as_str()) else {
            continue;
        };
        for l in &q.labels {
            if l.label == EvidentialityLabel::Unlabeled {
                continue;
            }
            if let Some(text) = texts.get(&l.sid) {
                candidates.push(Candidate {
                    question: &record.question,
                    text,
                    label: l.label,
                    qid: &q.qid,
                });
            }
        }
    }
    let scores = par::map(&candidates, |c| encoder.similarity(c.question, c.text));
    let example = |c: &Candidate, score: f64| EvaluatorExample {
        question: c.question.to_owned(),
        text: c.text.to_owned(),
        score,
    };

    let positives: Vec<EvaluatorExample> = candidates
        .iter()
        .zip(&scores)
        .filter(|(c, _)| c.label == EvidentialityLabel::Strong)
        .map(|(c, &s)| example(c, s))
        .collect();
    if positives.is_empty() {
        return Err(EvaluatorError::NoPositives);
    }

    let mut neg_idx: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].label != EvidentialityLabel::Strong)
        .collect();
    // stable: equal scores keep mining order
    neg_idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let wanted = ratio * positives.len();
    let shortfall = wanted.saturating_sub(neg_idx.len());
    if shortfall > 0 {
        log::warn!(
            "evaluator trainset: only {} negatives for {} positives at 1:{ratio}",
            neg_idx.len(),
            positives.len()
        );
    }
    let mut negatives: Vec<EvaluatorExample> = neg_idx
        .iter()
        .take(wanted)
        .map(|&i| example(&candidates[i], scores[i]))
        .collect();
    let mut positives = positives;

    if augment {
        let mut by_q: Vec<(&str, Vec<usize>)> = Vec::new();
        for (i, c) in candidates.iter().enumerate() {
            match by_q.last_mut() {
                Some((qid, idx)) if *qid == c.qid => idx.push(i),
                _ => by_q.push((c.qid, vec![i])),
            }
        }
        for (_, idx) in by_q {
            let Some(&strong) = idx
                .iter()
                .find(|&&i| candidates[i].label == EvidentialityLabel::Strong)
            else {
                continue;
            };
            let mut others: Vec<usize> = idx
                .iter()
                .copied()
                .filter(|&i| candidates[i].label != EvidentialityLabel::Strong)
                .collect();
            others.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            others.truncate(4);
            if others.is_empty() {
                continue;
            }
            let question = candidates[strong].question;
            let rest: Vec<&str> = others.iter().map(|&i| candidates[i].text).collect();
            let with_strong = format!("{} {}", candidates[strong].text, rest.join(" "));
            let without = rest.join(" ");
            positives.push(EvaluatorExample {
                question: question.to_owned(),
                score: encoder.similarity(question, &with_strong),
                text: with_strong,
            });
            negatives.push(EvaluatorExample {
                question: question.to_owned(),
                score: encoder.similarity(question, &without),
                text: without,
            });
        }
    }

    Ok(EvaluatorTrainSet {
        positives,
        negatives,
        shortfall,
    })
}
