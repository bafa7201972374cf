//! Logistic `<EVI>`/`<NOT>` classifier over dual-encoder features.
//!
//! Features for a (question, text) pair: query embedding, document
//! embedding, their elementwise product, their dot product and
//! `ln(1 + tokens)`, so `3 * dim + 2` values. Training is full-batch
//! gradient descent on standardized features; the standardization is folded
//! back into the weights before they are quantized to `f32`.
//!
//! File layout:
//!
//! ```text
//! {"format":"ecorag-eval-v1","feature_dim":194,"encoder_fingerprint":"..."}\n
//! <feature_dim f32 weights><f32 bias>
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvaluatorError, EvaluatorTrainSet};
use crate::corpus::{count_tokens, TokenizerConfig};
use crate::encoder::{
    check_format, dot, push_f32s, read_f32s, split_header, EncoderModel, ModelFileError,
};
use crate::par;

pub const EVALUATOR_FORMAT: &str = "ecorag-eval-v1";

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `p(EVI)` from a softmax over the two class logits.
pub fn two_way_softmax(z_evi: f64, z_not: f64) -> f64 {
    let m = z_evi.max(z_not);
    let a = (z_evi - m).exp();
    let b = (z_not - m).exp();
    a / (a + b)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn features(
    encoder: &EncoderModel,
    tokenizer: &TokenizerConfig,
    question: &str,
    text: &str,
) -> Vec<f64> {
    let q = encoder.embed_query(question);
    let d = encoder.embed_doc(text);
    let mut phi = Vec::with_capacity(3 * q.len() + 2);
    phi.extend_from_slice(&q);
    phi.extend_from_slice(&d);
    phi.extend(q.iter().zip(&d).map(|(a, b)| a * b));
    phi.push(dot(&q, &d));
    phi.push((count_tokens(text, tokenizer) as f64).ln_1p());
    phi
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub encoder_fingerprint: String,
}

impl EvaluatorClassifier {
    pub fn feature_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn logit(&self, phi: &[f64]) -> f64 {
        dot(&self.weights, phi) + self.bias
    }

    pub fn probability(&self, phi: &[f64]) -> f64 {
        sigmoid(self.logit(phi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalTrainConfig {
    pub epochs: usize,
    /// Upper bound on the step; the effective step is also capped at the
    /// inverse smoothness bound so every epoch lowers the loss.
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for EvalTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 1.0,
            l2: 0.0,
        }
    }
}

impl EvalTrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            errors.push(format!("evaluator.learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            errors.push(format!("evaluator.l2 must be >= 0, got {}", self.l2));
        }
        errors
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTrainReport {
    pub positives: usize,
    pub negatives: usize,
    pub step_size: f64,
    /// Mean BCE before each epoch's update, then once after the last.
    pub losses: Vec<f64>,
    pub train_accuracy: f64,
}

pub fn train_evaluator(
    trainset: &EvaluatorTrainSet,
    encoder: &EncoderModel,
    tokenizer: &TokenizerConfig,
    cfg: &EvalTrainConfig,
) -> Result<(EvaluatorClassifier, EvalTrainReport), EvaluatorError> {
    let (np, nn) = (trainset.positives.len(), trainset.negatives.len());
    if np == 0 || nn == 0 {
        return Err(EvaluatorError::OneSided {
            positives: np,
            negatives: nn,
        });
    }
    let examples: Vec<(&str, &str, f64)> = trainset
        .positives
        .iter()
        .map(|e| (e.question.as_str(), e.text.as_str(), 1.0))
        .chain(trainset.negatives.iter().map(|e| (e.question.as_str(), e.text.as_str(), 0.0)))
        .collect();
    let raw = par::map(&examples, |(q, t, _)| features(encoder, tokenizer, q, t));
    let labels: Vec<f64> = examples.iter().map(|e| e.2).collect();
    let n = raw.len() as f64;
    let k = raw[0].len();

    let mut mean = vec![0.0; k];
    for phi in &raw {
        for (m, v) in mean.iter_mut().zip(phi) {
            *m += v / n;
        }
    }
    let mut scale = vec![0.0; k];
    for phi in &raw {
        for ((s, v), m) in scale.iter_mut().zip(phi).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    // constant features stay at zero after centring
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let x: Vec<Vec<f64>> = raw
        .iter()
        .map(|phi| {
            phi.iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();

    // Hessian of mean BCE is bounded by 1/4 * E[|x|^2 + 1] (trace bound)
    let smooth = 0.25 * (x.iter().map(|r| dot(r, r) + 1.0).sum::<f64>() / n) + cfg.l2;
    let step = cfg.learning_rate.min(1.0 / smooth);

    let mut w = vec![0.0; k];
    let mut b = 0.0;
    let objective = |w: &[f64], logits: &[f64]| {
        logits
            .iter()
            .zip(&labels)
            .map(|(z, y)| softplus(*z) - y * z)
            .sum::<f64>()
            / n
            + 0.5 * cfg.l2 * dot(w, w)
    };
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        let logits: Vec<f64> = x.iter().map(|r| dot(&w, r) + b).collect();
        losses.push(objective(&w, &logits));
        let mut gw = vec![0.0; k];
        let mut gb = 0.0;
        for ((r, z), y) in x.iter().zip(&logits).zip(&labels) {
            let err = (sigmoid(*z) - y) / n;
            gb += err;
            for (g, v) in gw.iter_mut().zip(r) {
                *g += err * v;
            }
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= step * (g + cfg.l2 * *wi);
        }
        b -= step * gb;
    }
    let logits: Vec<f64> = x.iter().map(|r| dot(&w, r) + b).collect();
    losses.push(objective(&w, &logits));

    // fold (x - mean) / scale into raw-feature weights
    let weights: Vec<f64> = w.iter().zip(&scale).map(|(wi, s)| wi / s).collect();
    let bias = b - weights.iter().zip(&mean).map(|(wi, m)| wi * m).sum::<f64>();
    let clf = EvaluatorClassifier {
        weights: weights.iter().map(|&v| v as f32 as f64).collect(),
        bias: bias as f32 as f64,
        encoder_fingerprint: encoder.fingerprint(),
    };
    let correct = raw
        .iter()
        .zip(&labels)
        .filter(|(phi, y)| (clf.logit(phi) >= 0.0) == (**y > 0.5))
        .count();
    Ok((
        clf,
        EvalTrainReport {
            positives: np,
            negatives: nn,
            step_size: step,
            losses,
            train_accuracy: correct as f64 / n,
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    feature_dim: usize,
    encoder_fingerprint: String,
}

pub fn encode_classifier(clf: &EvaluatorClassifier) -> Vec<u8> {
    let header = Header {
        format: EVALUATOR_FORMAT.into(),
        feature_dim: clf.feature_dim(),
        encoder_fingerprint: clf.encoder_fingerprint.clone(),
    };
    let mut buf = serde_json::to_vec(&header).expect("header serializes");
    buf.push(b'\n');
    push_f32s(&mut buf, &clf.weights);
    push_f32s(&mut buf, &[clf.bias]);
    buf
}

pub fn decode_classifier(bytes: &[u8]) -> Result<EvaluatorClassifier, ModelFileError> {
    check_format(bytes, EVALUATOR_FORMAT)?;
    let (h, payload) = split_header::<Header>(bytes)?;
    let mut values = read_f32s(payload, h.feature_dim + 1)?;
    let bias = values.pop().expect("bias present");
    Ok(EvaluatorClassifier {
        weights: values,
        bias,
        encoder_fingerprint: h.encoder_fingerprint,
    })
}

pub fn save_classifier(clf: &EvaluatorClassifier, path: &Path) -> Result<(), ModelFileError> {
    crate::io::write_atomic(path, &encode_classifier(clf))?;
    Ok(())
}

/// Loads without checking which encoder the classifier was trained on.
pub fn load_classifier_unchecked(path: &Path) -> Result<EvaluatorClassifier, ModelFileError> {
    decode_classifier(&std::fs::read(path)?)
}

/// Loads and rejects a classifier trained on a different encoder.
pub fn load_classifier(
    path: &Path,
    encoder: &EncoderModel,
) -> Result<EvaluatorClassifier, EvaluatorError> {
    let clf = load_classifier_unchecked(path)?;
    let fp = encoder.fingerprint();
    if clf.encoder_fingerprint != fp {
        return Err(EvaluatorError::FingerprintMismatch {
            evaluator: clf.encoder_fingerprint,
            encoder: fp,
        });
    }
    if clf.feature_dim() != 3 * encoder.dim() + 2 {
        return Err(ModelFileError::Corrupt(format!(
            "feature_dim {} does not fit encoder dim {}",
            clf.feature_dim(),
            encoder.dim()
        ))
        .into());
    }
    Ok(clf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::EvaluatorExample;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn ex(q: &str, t: &str) -> EvaluatorExample {
        EvaluatorExample {
            question: q.into(),
            text: t.into(),
            score: 0.0,
        }
    }

    fn toy() -> (EncoderModel, EvaluatorTrainSet) {
        let encoder = EncoderModel::random(8, 512, 3, 0.5, 21);
        let set = EvaluatorTrainSet {
            positives: (0..10).map(|i| ex("who won", &format!("winner cue{i} answer"))).collect(),
            negatives: (0..30)
                .map(|i| ex("who won", &format!("filler noise{i} text here")))
                .collect(),
            shortfall: 0,
        };
        (encoder, set)
    }

    proptest! {
        #[test]
        fn softmax_and_sigmoid_agree(a in -40.0f64..40.0, b in -40.0f64..40.0) {
            prop_assert!((two_way_softmax(a, b) - sigmoid(a - b)).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_layout() {
        let encoder = EncoderModel::random(5, 64, 0, 0.5, 2);
        let tok = TokenizerConfig::default();
        let phi = features(&encoder, &tok, "a question", "some text here");
        assert_eq!(phi.len(), 17);
        let q = encoder.embed_query("a question");
        let d = encoder.embed_doc("some text here");
        assert_eq!(&phi[..5], &q[..]);
        assert_eq!(&phi[5..10], &d[..]);
        assert!((phi[15] - dot(&q, &d)).abs() < 1e-15);
        assert!((phi[16] - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn trailing_punctuation_leaves_features_unchanged() {
        let encoder = EncoderModel::random(5, 64, 0, 0.5, 2);
        let tok = TokenizerConfig::default();
        let a = features(&encoder, &tok, "q", "the river flows");
        let b = features(&encoder, &tok, "q", "the river flows ... !!");
        assert_eq!(a, b);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            let loss = |w: &[f64]| {
                let z = dot(w, &x);
                softplus(z) - y * z
            };
            let g = sigmoid(dot(&w, &x)) - y;
            let h = 1e-6;
            for i in 0..6 {
                let mut up = w.clone();
                up[i] += h;
                let mut dn = w.clone();
                dn[i] -= h;
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                assert!((fd - g * x[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn training_lowers_loss_monotonically_and_separates() {
        let (encoder, set) = toy();
        let tok = TokenizerConfig::default();
        let cfg = EvalTrainConfig {
            epochs: 200,
            ..Default::default()
        };
        let (clf, report) = train_evaluator(&set, &encoder, &tok, &cfg).unwrap();
        assert_eq!(report.losses.len(), 201);
        for w in report.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
        assert!(report.losses[0] > report.losses[200]);
        assert_eq!(clf.feature_dim(), 26);
        assert!(report.train_accuracy >= 0.9, "{}", report.train_accuracy);
    }

    #[test]
    fn one_sided_set_is_an_error() {
        let (encoder, mut set) = toy();
        set.negatives.clear();
        let err = train_evaluator(&set, &encoder, &TokenizerConfig::default(), &Default::default())
            .unwrap_err();
        assert!(matches!(err, EvaluatorError::OneSided { positives: 10, negatives: 0 }));
    }

    #[test]
    fn file_round_trip_and_fingerprint_check() {
        let (encoder, set) = toy();
        let tok = TokenizerConfig::default();
        let (clf, _) = train_evaluator(&set, &encoder, &tok, &Default::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.bin");
        save_classifier(&clf, &path).unwrap();
        assert_eq!(load_classifier(&path, &encoder).unwrap(), clf);
        let other = EncoderModel::random(8, 512, 3, 0.5, 22);
        match load_classifier(&path, &other) {
            Err(EvaluatorError::FingerprintMismatch { evaluator, encoder: e }) => {
                assert_eq!(evaluator, encoder.fingerprint());
                assert_eq!(e, other.fingerprint());
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
        let bytes = encode_classifier(&clf);
        assert!(matches!(
            decode_classifier(&bytes[..bytes.len() - 2]),
            Err(ModelFileError::Corrupt(_))
        ));
    }
}
