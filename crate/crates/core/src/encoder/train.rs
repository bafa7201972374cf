use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loss::{loss_and_gradient, Gradient, TrainingBatch};
use super::model::{quantize, EncoderModel, Side};
use crate::corpus::{QuestionRecord, TokenizerConfig};
use crate::miner::{EvidentialityLabel, MinedDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    MomentumSgd { momentum: f64 },
}

/// Encoder training settings.
///
/// The batch composition (8 strong positives, 56 negatives, weak evidence
/// making up 15% of the strong-term negatives) and `tau = 1.0` follow the
/// reference setup. The learning rate targets the bag-of-embeddings model;
/// a pretrained transformer encoder would use an adaptive optimizer at a
/// rate around 5e-5 instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub tau: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub positives_per_batch: usize,
    pub negatives_per_batch: usize,
    pub weak_fraction_in_se_negatives: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub dim: usize,
    pub bucket_count: usize,
    pub hash_seed: u64,
    /// Initial weights are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            learning_rate: 1e-2,
            epochs: 4,
            positives_per_batch: 8,
            negatives_per_batch: 56,
            weak_fraction_in_se_negatives: 0.15,
            seed: 13,
            optimizer: Optimizer::Sgd,
            dim: 64,
            bucket_count: 65_536,
            hash_seed: 0,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            problems.push(format!("encoder.tau must be positive, got {}", self.tau));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!(
                "encoder.learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..=1.0).contains(&self.weak_fraction_in_se_negatives) {
            problems.push(format!(
                "encoder.weak_fraction_in_se_negatives must lie in [0, 1], got {}",
                self.weak_fraction_in_se_negatives
            ));
        }
        if self.positives_per_batch == 0 {
            problems.push("encoder.positives_per_batch must be positive".into());
        }
        if self.dim == 0 || self.bucket_count == 0 {
            problems.push("encoder.dim and encoder.bucket_count must be positive".into());
        }
        if let Optimizer::MomentumSgd { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                problems.push(format!("encoder.optimizer.momentum must lie in [0, 1), got {momentum}"));
            }
        }
        problems
    }

    pub fn init_model(&self) -> EncoderModel {
        EncoderModel::random(
            self.dim,
            self.bucket_count,
            self.hash_seed,
            self.init_scale,
            self.seed,
        )
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no trainable questions: every mined question lacks strong evidence or was answered closed-book")]
    NoTrainableQuestions,
    #[error("invalid training config: {0}")]
    Config(String),
}

/// All labeled sentence texts of one question.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionPool {
    pub question: String,
    pub strong: Vec<String>,
    pub weak: Vec<String>,
    pub distractor: Vec<String>,
}

/// Collects labeled texts for every trainable question.
pub fn question_pools(
    mined: &MinedDataset,
    records: &[QuestionRecord],
    tokenizer: &TokenizerConfig,
) -> Vec<QuestionPool> {
    let by_id: HashMap<&str, &QuestionRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut pools = Vec::new();
    for q in mined.questions.iter().filter(|q| q.is_trainable()) {
        let Some(record) = by_id.get(q.qid.as_str()) else {
            log::warn!("mined question {} has no matching record", q.qid);
            continue;
        };
        let texts: HashMap<String, String> = record
            .sentences(tokenizer)
            .into_iter()
            .map(|s| (s.id, s.text))
            .collect();
        let mut pool = QuestionPool {
            question: record.question.clone(),
            ..Default::default()
        };
        for l in &q.labels {
            let Some(text) = texts.get(&l.sid) else {
                log::warn!("question {}: unknown sentence {}", q.qid, l.sid);
                continue;
            };
            match l.label {
                EvidentialityLabel::Strong => pool.strong.push(text.clone()),
                EvidentialityLabel::Weak => pool.weak.push(text.clone()),
                EvidentialityLabel::Distractor => pool.distractor.push(text.clone()),
                EvidentialityLabel::Unlabeled => {}
            }
        }
        if !pool.strong.is_empty() {
            pools.push(pool);
        }
    }
    pools
}

/// Weak/distractor counts for the strong-term negative pool: as close to
/// `budget` as availability allows while keeping the weak share at
/// `weak_fraction`. If one kind is absent the other fills the pool alone.
pub fn negative_split(weak: usize, distractor: usize, budget: usize, weak_fraction: f64) -> (usize, usize) {
    if weak == 0 || weak_fraction <= 0.0 {
        return (0, distractor.min(budget));
    }
    if distractor == 0 || weak_fraction >= 1.0 {
        return (weak.min(budget), 0);
    }
    let cap_w = (weak as f64 / weak_fraction).floor();
    let cap_d = (distractor as f64 / (1.0 - weak_fraction)).floor();
    let total = (budget as f64).min(cap_w).min(cap_d) as usize;
    let w = ((weak_fraction * total as f64).round() as usize).min(weak);
    let d = (total - w).min(distractor);
    (w, d)
}

/// Draws one batch from a pool.
pub fn sample_batch(pool: &QuestionPool, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> TrainingBatch {
    let mut pick = |texts: &[String], n: usize| -> Vec<String> {
        let mut idx: Vec<usize> = (0..texts.len()).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        idx.into_iter().map(|i| texts[i].clone()).collect()
    };
    let strong = pick(&pool.strong, cfg.positives_per_batch);
    let (nw, nd) = negative_split(
        pool.weak.len(),
        pool.distractor.len(),
        cfg.negatives_per_batch,
        cfg.weak_fraction_in_se_negatives,
    );
    TrainingBatch {
        question: pool.question.clone(),
        strong,
        weak: pick(&pool.weak, nw),
        distractor: pick(&pool.distractor, nd),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub trainable_questions: usize,
    pub epochs: Vec<EpochStats>,
    pub fingerprint: String,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

struct Stepper {
    lr: f64,
    momentum: Option<f64>,
    velocity: BTreeMap<(u8, usize), Vec<f64>>,
}

impl Stepper {
    fn step(&mut self, model: &mut EncoderModel, grad: &Gradient) {
        let sides = [(0u8, Side::Query, &grad.query), (1u8, Side::Doc, &grad.doc)];
        match self.momentum {
            None => {
                for (_, side, rows) in sides {
                    for (&b, g) in &rows.rows {
                        for (w, gk) in model.row_mut(side, b).iter_mut().zip(g) {
                            *w = quantize(*w - self.lr * gk);
                        }
                    }
                }
            }
            Some(mu) => {
                for v in self.velocity.values_mut() {
                    v.iter_mut().for_each(|x| *x *= mu);
                }
                for (tag, _, rows) in sides {
                    for (&b, g) in &rows.rows {
                        let v = self
                            .velocity
                            .entry((tag, b))
                            .or_insert_with(|| vec![0.0; g.len()]);
                        v.iter_mut().zip(g).for_each(|(x, gk)| *x += gk);
                    }
                }
                for (&(tag, b), v) in &self.velocity {
                    let side = if tag == 0 { Side::Query } else { Side::Doc };
                    for (w, vk) in model.row_mut(side, b).iter_mut().zip(v) {
                        *w = quantize(*w - self.lr * vk);
                    }
                }
            }
        }
    }
}

/// Trains from explicit per-question pools. Deterministic given `cfg.seed`.
pub fn train_pools(
    pools: &[QuestionPool],
    cfg: &TrainConfig,
) -> Result<(EncoderModel, TrainReport), TrainError> {
    let problems = cfg.validate();
    if !problems.is_empty() {
        return Err(TrainError::Config(problems.join("; ")));
    }
    if pools.is_empty() {
        return Err(TrainError::NoTrainableQuestions);
    }
    let mut model = cfg.init_model();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // stream 0 initialized the weights
    rng.set_stream(1);
    let mut stepper = Stepper {
        lr: cfg.learning_rate,
        momentum: match cfg.optimizer {
            Optimizer::Sgd => None,
            Optimizer::MomentumSgd { momentum } => Some(momentum),
        },
        velocity: BTreeMap::new(),
    };
    let mut report = TrainReport {
        trainable_questions: pools.len(),
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..pools.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let batch = sample_batch(&pools[i], cfg, &mut rng);
            let (loss, grad) = loss_and_gradient(&model, &batch, cfg.tau);
            total += loss;
            stepper.step(&mut model, &grad);
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss: total / order.len() as f64,
            batches: order.len(),
        };
        log::info!("encoder epoch {}: mean loss {:.6}", stats.epoch, stats.mean_loss);
        report.epochs.push(stats);
    }
    debug_assert!(model.is_finite());
    report.fingerprint = model.fingerprint();
    Ok((model, report))
}

/// Trains the encoder on mined labels.
pub fn train(
    mined: &MinedDataset,
    records: &[QuestionRecord],
    cfg: &TrainConfig,
    tokenizer: &TokenizerConfig,
) -> Result<(EncoderModel, TrainReport), TrainError> {
    train_pools(&question_pools(mined, records, tokenizer), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_split_keeps_ratio() {
        assert_eq!(negative_split(100, 100, 56, 0.15), (8, 48));
        // scaled down by the distractor supply: floor(12 / 0.85) = 14
        assert_eq!(negative_split(6, 12, 56, 0.15), (2, 12));
        assert_eq!(negative_split(0, 12, 56, 0.15), (0, 12));
        assert_eq!(negative_split(5, 0, 56, 0.15), (5, 0));
        assert_eq!(negative_split(0, 0, 56, 0.15), (0, 0));
        assert_eq!(negative_split(3, 200, 56, 0.0), (0, 56));
    }

    fn pools() -> Vec<QuestionPool> {
        (0..6)
            .map(|i| QuestionPool {
                question: format!("what is item{i} made of"),
                strong: vec![format!("item{i} is made of steel")],
                weak: vec![format!("item{i} is heavy"), "metal is common".into()],
                distractor: vec![format!("item{i} rhymes with gem"), "wood burns".into()],
            })
            .collect()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            dim: 8,
            bucket_count: 256,
            epochs: 3,
            learning_rate: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let (model, report) = train_pools(&pools(), &cfg).unwrap();
        assert_eq!(model, cfg.init_model());
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn same_seed_same_weights() {
        let (a, ra) = train_pools(&pools(), &small_cfg()).unwrap();
        let (b, rb) = train_pools(&pools(), &small_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        let other = TrainConfig {
            seed: 99,
            ..small_cfg()
        };
        assert_ne!(train_pools(&pools(), &other).unwrap().0, a);
    }

    #[test]
    fn momentum_variant_trains() {
        let cfg = TrainConfig {
            optimizer: Optimizer::MomentumSgd { momentum: 0.5 },
            ..small_cfg()
        };
        let (model, report) = train_pools(&pools(), &cfg).unwrap();
        assert!(model.is_finite());
        assert_eq!(report.epochs.len(), 3);
    }

    #[test]
    fn empty_pools_are_rejected() {
        assert!(matches!(
            train_pools(&[], &small_cfg()),
            Err(TrainError::NoTrainableQuestions)
        ));
        let bad = TrainConfig {
            tau: 0.0,
            ..small_cfg()
        };
        assert!(matches!(train_pools(&pools(), &bad), Err(TrainError::Config(_))));
    }
}
