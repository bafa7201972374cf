//! Weak- and strong-evidentiality InfoNCE objectives and their exact
//! gradients with respect to both embedding tables.
//!
//! With scores `s = E_Q(q) · E_D(d)` and temperature `τ`:
//!
//! * `L_we` contrasts each weak positive against the distractors,
//! * `L_se` contrasts each strong positive against weak ∪ distractor,
//! * `L = L_se + L_we`.
//!
//! Several positives of one kind are averaged. A term without positives
//! contributes 0, and a term without negatives is identically 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::model::{dot, EncoderModel, Side};

/// Texts of one question's training batch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingBatch {
    pub question: String,
    /// Strong evidence (d*).
    pub strong: Vec<String>,
    /// Weak evidence (d⁺).
    pub weak: Vec<String>,
    /// Distractors (d⁻).
    pub distractor: Vec<String>,
}

/// `-log softmax(pos)` over `[pos, negs...] / tau`, with the max shift.
pub fn info_nce(pos: f64, negs: &[f64], tau: f64) -> f64 {
    let z_pos = pos / tau;
    let max = negs.iter().fold(z_pos, |m, &s| m.max(s / tau));
    let denom: f64 = (z_pos - max).exp() + negs.iter().map(|&s| (s / tau - max).exp()).sum::<f64>();
    (max + denom.ln() - z_pos).max(0.0)
}

/// Derivatives of [`info_nce`] with respect to `pos` and each negative.
pub fn info_nce_grad(pos: f64, negs: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let z_pos = pos / tau;
    let max = negs.iter().fold(z_pos, |m, &s| m.max(s / tau));
    let e_pos = (z_pos - max).exp();
    let e_negs: Vec<f64> = negs.iter().map(|&s| (s / tau - max).exp()).collect();
    let denom = e_pos + e_negs.iter().sum::<f64>();
    let d_pos = (e_pos / denom - 1.0) / tau;
    let d_negs = e_negs.iter().map(|e| e / denom / tau).collect();
    (d_pos, d_negs)
}

pub fn loss_we_from_scores(weak: &[f64], distractor: &[f64], tau: f64) -> f64 {
    if weak.is_empty() {
        return 0.0;
    }
    weak.iter().map(|&w| info_nce(w, distractor, tau)).sum::<f64>() / weak.len() as f64
}

pub fn loss_se_from_scores(strong: &[f64], weak: &[f64], distractor: &[f64], tau: f64) -> f64 {
    if strong.is_empty() {
        return 0.0;
    }
    let negs: Vec<f64> = weak.iter().chain(distractor).copied().collect();
    strong.iter().map(|&s| info_nce(s, &negs, tau)).sum::<f64>() / strong.len() as f64
}

/// Scores of every text in a batch against its question.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchScores {
    pub strong: Vec<f64>,
    pub weak: Vec<f64>,
    pub distractor: Vec<f64>,
}

impl BatchScores {
    pub fn compute(model: &EncoderModel, batch: &TrainingBatch) -> Self {
        let q = model.embed_query(&batch.question);
        let score = |texts: &[String]| -> Vec<f64> {
            texts.iter().map(|t| dot(&q, &model.embed_doc(t))).collect()
        };
        Self {
            strong: score(&batch.strong),
            weak: score(&batch.weak),
            distractor: score(&batch.distractor),
        }
    }

    pub fn loss_we(&self, tau: f64) -> f64 {
        loss_we_from_scores(&self.weak, &self.distractor, tau)
    }

    pub fn loss_se(&self, tau: f64) -> f64 {
        loss_se_from_scores(&self.strong, &self.weak, &self.distractor, tau)
    }
}

pub fn loss_we(model: &EncoderModel, batch: &TrainingBatch, tau: f64) -> f64 {
    BatchScores::compute(model, batch).loss_we(tau)
}

pub fn loss_se(model: &EncoderModel, batch: &TrainingBatch, tau: f64) -> f64 {
    BatchScores::compute(model, batch).loss_se(tau)
}

pub fn total_loss(model: &EncoderModel, batch: &TrainingBatch, tau: f64) -> f64 {
    let s = BatchScores::compute(model, batch);
    s.loss_se(tau) + s.loss_we(tau)
}

/// Gradient of [`total_loss`] with respect to each score, in batch order.
pub fn score_gradient(scores: &BatchScores, tau: f64) -> BatchScores {
    let mut g = BatchScores {
        strong: vec![0.0; scores.strong.len()],
        weak: vec![0.0; scores.weak.len()],
        distractor: vec![0.0; scores.distractor.len()],
    };
    if !scores.weak.is_empty() {
        let k = scores.weak.len() as f64;
        for (i, &w) in scores.weak.iter().enumerate() {
            let (dp, dn) = info_nce_grad(w, &scores.distractor, tau);
            g.weak[i] += dp / k;
            for (gd, d) in g.distractor.iter_mut().zip(dn) {
                *gd += d / k;
            }
        }
    }
    if !scores.strong.is_empty() {
        let k = scores.strong.len() as f64;
        let negs: Vec<f64> = scores.weak.iter().chain(&scores.distractor).copied().collect();
        let n_weak = scores.weak.len();
        for (i, &s) in scores.strong.iter().enumerate() {
            let (dp, dn) = info_nce_grad(s, &negs, tau);
            g.strong[i] += dp / k;
            for (j, d) in dn.into_iter().enumerate() {
                if j < n_weak {
                    g.weak[j] += d / k;
                } else {
                    g.distractor[j - n_weak] += d / k;
                }
            }
        }
    }
    g
}

/// Rows of one embedding table, keyed by bucket; absent rows are zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    pub dim: usize,
    pub rows: BTreeMap<usize, Vec<f64>>,
}

impl SparseRows {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    fn add_scaled(&mut self, bucket: usize, v: &[f64], scale: f64) {
        let row = self.rows.entry(bucket).or_insert_with(|| vec![0.0; v.len()]);
        for (r, x) in row.iter_mut().zip(v) {
            *r += scale * x;
        }
    }

    pub fn get(&self, bucket: usize, k: usize) -> f64 {
        self.rows.get(&bucket).map_or(0.0, |r| r[k])
    }

    pub fn to_dense(&self, bucket_count: usize) -> Vec<f64> {
        let mut out = vec![0.0; bucket_count * self.dim];
        for (&b, row) in &self.rows {
            out[b * self.dim..(b + 1) * self.dim].copy_from_slice(row);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.rows.values().flatten().all(|&x| x == 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().flatten().all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub query: SparseRows,
    pub doc: SparseRows,
}

impl Gradient {
    pub fn side(&self, side: Side) -> &SparseRows {
        match side {
            Side::Query => &self.query,
            Side::Doc => &self.doc,
        }
    }
}

/// Loss and exact gradient of [`total_loss`] for one batch.
///
/// Only buckets hashed from the batch texts appear in the result.
pub fn loss_and_gradient(model: &EncoderModel, batch: &TrainingBatch, tau: f64) -> (f64, Gradient) {
    let dim = model.dim();
    let q_buckets = model.buckets(&batch.question);
    let q = model.pool(Side::Query, &q_buckets);

    let texts: Vec<&String> = batch
        .strong
        .iter()
        .chain(&batch.weak)
        .chain(&batch.distractor)
        .collect();
    let doc_buckets: Vec<Vec<usize>> = texts.iter().map(|t| model.buckets(t)).collect();
    let docs: Vec<Vec<f64>> = doc_buckets.iter().map(|b| model.pool(Side::Doc, b)).collect();
    let all: Vec<f64> = docs.iter().map(|d| dot(&q, d)).collect();

    let (ns, nw) = (batch.strong.len(), batch.weak.len());
    let scores = BatchScores {
        strong: all[..ns].to_vec(),
        weak: all[ns..ns + nw].to_vec(),
        distractor: all[ns + nw..].to_vec(),
    };
    let loss = scores.loss_se(tau) + scores.loss_we(tau);
    let g = score_gradient(&scores, tau);
    let g_all: Vec<f64> = g.strong.into_iter().chain(g.weak).chain(g.distractor).collect();

    // dL/dq = Σ g_x d_x ; dL/dd_x = g_x q ; mean pooling spreads 1/n per token.
    let mut d_q = vec![0.0; dim];
    let mut doc_grad = SparseRows::new(dim);
    for ((gx, d), buckets) in g_all.iter().zip(&docs).zip(&doc_buckets) {
        for (acc, v) in d_q.iter_mut().zip(d) {
            *acc += gx * v;
        }
        if buckets.is_empty() {
            continue;
        }
        let scale = gx / buckets.len() as f64;
        for &b in buckets {
            doc_grad.add_scaled(b, &q, scale);
        }
    }
    let mut query_grad = SparseRows::new(dim);
    if !q_buckets.is_empty() {
        let scale = 1.0 / q_buckets.len() as f64;
        for &b in &q_buckets {
            query_grad.add_scaled(b, &d_q, scale);
        }
    }
    (
        loss,
        Gradient {
            query: query_grad,
            doc: doc_grad,
        },
    )
}

pub fn gradient(model: &EncoderModel, batch: &TrainingBatch, tau: f64) -> Gradient {
    loss_and_gradient(model, batch, tau).1
}
