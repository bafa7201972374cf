//! Evidentiality evaluators: judge whether a compressed context is enough
//! for the reader to answer.
//!
//! Three implementations share the [`Evaluator`] trait:
//!
//! * [`ClassifierEvaluator`]: logistic classifier over dual-encoder features,
//!   trained on mined labels (strong evidence is `<EVI>`, everything else
//!   `<NOT>`),
//! * [`OracleEvaluator`]: asks the answer oracle directly,
//! * [`ThresholdEvaluator`]: accepts once some selected sentence scores above
//!   a fixed similarity.

mod classifier;
mod trainset;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TokenizerConfig;
use crate::encoder::{EncoderModel, ModelFileError};
use crate::oracle::{answer_matches, MatchMode, Oracle, OracleError, OracleRequest, TemplateId};

pub use classifier::{
    decode_classifier, encode_classifier, features, load_classifier, load_classifier_unchecked,
    save_classifier, sigmoid, train_evaluator, two_way_softmax, EvalTrainConfig, EvalTrainReport,
    EvaluatorClassifier, EVALUATOR_FORMAT,
};
pub use trainset::{build_trainset, EvaluatorExample, EvaluatorTrainSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "EVI")]
    Evi,
    #[serde(rename = "NOT")]
    Not,
}

impl Verdict {
    pub fn from_bool(evidential: bool) -> Self {
        if evidential {
            Verdict::Evi
        } else {
            Verdict::Not
        }
    }

    pub fn is_evi(self) -> bool {
        self == Verdict::Evi
    }
}

#[derive(Debug, Error)]
pub enum EvaluatorError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("mined labels contain no strong evidence")]
    NoPositives,
    #[error("training set is one-sided: {positives} positives, {negatives} negatives")]
    OneSided { positives: usize, negatives: usize },
    #[error(
        "evaluator was built on encoder {evaluator} but the loaded encoder is {encoder}"
    )]
    FingerprintMismatch { evaluator: String, encoder: String },
    #[error(transparent)]
    File(#[from] ModelFileError),
}

/// What an evaluator sees: the question, its gold aliases (used only by the
/// oracle-backed variant), the selected sentences and their concatenation.
#[derive(Debug, Clone, Copy)]
pub struct Probe<'a> {
    pub question: &'a str,
    pub gold_answers: &'a [String],
    pub pieces: &'a [&'a str],
    pub text: &'a str,
}

pub trait Evaluator: Send + Sync {
    fn assess(&self, probe: &Probe<'_>) -> Result<Verdict, EvaluatorError>;

    /// Fingerprint of the encoder this evaluator depends on, if any.
    fn encoder_fingerprint(&self) -> Option<String> {
        None
    }

    fn name(&self) -> &'static str;
}

impl<E: Evaluator + ?Sized> Evaluator for &E {
    fn assess(&self, probe: &Probe<'_>) -> Result<Verdict, EvaluatorError> {
        (**self).assess(probe)
    }
    fn encoder_fingerprint(&self) -> Option<String> {
        (**self).encoder_fingerprint()
    }
    fn name(&self) -> &'static str {
        (**self).name()
    }
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn assess(&self, probe: &Probe<'_>) -> Result<Verdict, EvaluatorError> {
        (**self).assess(probe)
    }
    fn encoder_fingerprint(&self) -> Option<String> {
        (**self).encoder_fingerprint()
    }
    fn name(&self) -> &'static str {
        (**self).name()
    }
}

/// Convenience wrapper for a single compressed text.
pub fn assess(
    evaluator: &dyn Evaluator,
    question: &str,
    gold_answers: &[String],
    compressed: &str,
) -> Result<Verdict, EvaluatorError> {
    let pieces = [compressed];
    evaluator.assess(&Probe {
        question,
        gold_answers,
        pieces: &pieces,
        text: compressed,
    })
}

pub struct ClassifierEvaluator {
    classifier: EvaluatorClassifier,
    encoder: Arc<EncoderModel>,
    tokenizer: TokenizerConfig,
}

impl ClassifierEvaluator {
    /// Fails if the classifier was trained on a different encoder.
    pub fn new(
        classifier: EvaluatorClassifier,
        encoder: Arc<EncoderModel>,
        tokenizer: TokenizerConfig,
    ) -> Result<Self, EvaluatorError> {
        let fp = encoder.fingerprint();
        if classifier.encoder_fingerprint != fp {
            return Err(EvaluatorError::FingerprintMismatch {
                evaluator: classifier.encoder_fingerprint.clone(),
                encoder: fp,
            });
        }
        Ok(Self {
            classifier,
            encoder,
            tokenizer,
        })
    }

    pub fn classifier(&self) -> &EvaluatorClassifier {
        &self.classifier
    }

    pub fn probability(&self, question: &str, text: &str) -> f64 {
        self.classifier
            .probability(&features(&self.encoder, &self.tokenizer, question, text))
    }
}

impl Evaluator for ClassifierEvaluator {
    fn assess(&self, probe: &Probe<'_>) -> Result<Verdict, EvaluatorError> {
        Ok(Verdict::from_bool(self.probability(probe.question, probe.text) >= 0.5))
    }

    fn encoder_fingerprint(&self) -> Option<String> {
        Some(self.classifier.encoder_fingerprint.clone())
    }

    fn name(&self) -> &'static str {
        "classifier"
    }
}

/// How the oracle-backed evaluator questions the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleJudge {
    /// `<EVI>` iff the reader answers correctly from the compressed text.
    #[default]
    Answer,
    /// `<EVI>` iff the reader, given the evidentiality prompt, replies
    /// "[Evidential]".
    Prompted,
}

pub struct OracleEvaluator<O> {
    oracle: O,
    match_mode: MatchMode,
    judge: OracleJudge,
}

impl<O: Oracle> OracleEvaluator<O> {
    pub fn new(oracle: O, match_mode: MatchMode) -> Self {
        Self {
            oracle,
            match_mode,
            judge: OracleJudge::Answer,
        }
    }

    pub fn with_judge(mut self, judge: OracleJudge) -> Self {
        self.judge = judge;
        self
    }
}

impl<O: Oracle> Evaluator for OracleEvaluator<O> {
    fn assess(&self, probe: &Probe<'_>) -> Result<Verdict, EvaluatorError> {
        let template = match self.judge {
            OracleJudge::Answer => TemplateId::Qa,
            OracleJudge::Prompted => TemplateId::Evidentiality,
        };
        let attempt = self.oracle.generate(&OracleRequest {
            question: probe.question.to_owned(),
            context: Some(probe.text.to_owned()),
            template,
        })?;
        Ok(Verdict::from_bool(match self.judge {
            OracleJudge::Answer => answer_matches(&attempt.raw_text, probe.gold_answers, self.match_mode),
            OracleJudge::Prompted => {
                let reply = attempt.raw_text.to_lowercase();
                reply.contains("[evidential]") && !reply.contains("[non-evidential]")
            }
        }))
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

pub struct ThresholdEvaluator {
    encoder: Arc<EncoderModel>,
    threshold: f64,
}

impl ThresholdEvaluator {
    pub fn new(encoder: Arc<EncoderModel>, threshold: f64) -> Self {
        Self { encoder, threshold }
    }
}

impl Evaluator for ThresholdEvaluator {
    fn assess(&self, probe: &Probe<'_>) -> Result<Verdict, EvaluatorError> {
        let best = self
            .encoder
            .score_all(probe.question, probe.pieces)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Verdict::from_bool(best >= self.threshold))
    }

    fn encoder_fingerprint(&self) -> Option<String> {
        Some(self.encoder.fingerprint())
    }

    fn name(&self) -> &'static str {
        "threshold"
    }
}
