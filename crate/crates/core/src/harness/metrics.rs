//! QA and ranking metrics.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::compressor::CompressionResult;
use crate::corpus::{contains_token_run, normalize_answer, normalized_tokens};

/// 1.0 iff the normalized prediction equals some normalized gold alias.
pub fn exact_match(prediction: &str, golds: &[String]) -> f64 {
    let p = normalize_answer(prediction);
    if golds.iter().any(|g| normalize_answer(g) == p) {
        1.0
    } else {
        0.0
    }
}

fn f1_single(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Token-multiset F1, maximized over gold aliases.
pub fn f1_word(prediction: &str, golds: &[String]) -> f64 {
    let pred = normalized_tokens(prediction);
    golds
        .iter()
        .map(|g| f1_single(&pred, &normalized_tokens(g)))
        .fold(0.0, f64::max)
}

fn discount(rank0: usize) -> f64 {
    1.0 / ((rank0 + 2) as f64).log2()
}

/// Binary-gain NDCG@k. The ideal ordering is taken over the ranked items, so
/// relevant ids that never appear in `ranking` do not count. 0 when nothing
/// in the ranking is relevant.
pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], relevant: &HashSet<String>, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, id)| relevant.contains(id.as_ref()))
        .map(|(i, _)| discount(i))
        .sum();
    let present = ranking.iter().filter(|id| relevant.contains(id.as_ref())).count();
    let idcg: f64 = (0..present.min(k)).map(discount).sum();
    if idcg == 0.0 {
        log::debug!("ndcg: no relevant item in ranking");
        return 0.0;
    }
    dcg / idcg
}

pub const R_AT: usize = 20;

/// 1.0 iff one of the first 20 sentences contains a gold alias as a whole
/// normalized token run.
pub fn r20<S: AsRef<str>>(ranking: &[S], golds: &[String]) -> f64 {
    let golds: Vec<Vec<String>> = golds
        .iter()
        .map(|g| normalized_tokens(g))
        .filter(|g| !g.is_empty())
        .collect();
    let hit = ranking.iter().take(R_AT).any(|s| {
        let toks = normalized_tokens(s.as_ref());
        golds.iter().any(|g| contains_token_run(&toks, g))
    });
    if hit {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RatioStats {
    pub count: usize,
    /// Questions skipped because their original context had no tokens.
    pub excluded: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Lower middle for even counts.
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
}

pub fn ratio_stats(ratios: &[f64]) -> RatioStats {
    if ratios.is_empty() {
        return RatioStats::default();
    }
    let n = ratios.len() as f64;
    let mut sorted = ratios.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = ratios.iter().sum::<f64>() / n;
    let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    RatioStats {
        count: ratios.len(),
        excluded: 0,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        mean,
        median: sorted[(sorted.len() - 1) / 2],
        std: var.sqrt(),
    }
}

/// Compressed over original token counts, one ratio per question.
/// `originals[i]` pairs with `results[i]`.
pub fn compression_ratio_stats(results: &[CompressionResult], originals: &[usize]) -> RatioStats {
    assert_eq!(results.len(), originals.len(), "one original count per result");
    let mut excluded = 0;
    let ratios: Vec<f64> = results
        .iter()
        .zip(originals)
        .filter_map(|(r, &o)| {
            if o == 0 {
                log::warn!("compression ratio: {} has an empty original context", r.qid);
                excluded += 1;
                None
            } else {
                Some(r.token_count as f64 / o as f64)
            }
        })
        .collect();
    RatioStats {
        excluded,
        ..ratio_stats(&ratios)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn em_cases() {
        assert_eq!(exact_match("The Answer!", &g(&["answer"])), 1.0);
        assert_eq!(exact_match("Paris, France", &g(&["Paris"])), 0.0);
        assert_eq!(exact_match("tennyson", &g(&["Alfred, Lord Tennyson", "Tennyson"])), 1.0);
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1_word("same words here", &g(&["same words here"])), 1.0);
        assert!((f1_word("the cat sat", &g(&["cat sat down"])) - 0.8).abs() < 1e-12);
        assert_eq!(f1_word("alpha beta", &g(&["gamma"])), 0.0);
        assert_eq!(f1_word("the", &g(&["a"])), 1.0);
        assert_eq!(f1_word("", &g(&["x"])), 0.0);
        // multiset: repeated prediction tokens only match once
        assert!((f1_word("x x", &g(&["x y"])) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ndcg_cases() {
        let rel: HashSet<String> = ["a".to_string()].into();
        assert_eq!(ndcg_at_k(&["a", "b"], &rel, 1), 1.0);
        let v = ndcg_at_k(&["b", "a"], &rel, 2);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.63093).abs() < 1e-5);
        assert_eq!(ndcg_at_k(&["b", "c"], &rel, 2), 0.0);
        assert_eq!(ndcg_at_k(&["b", "a"], &HashSet::new(), 2), 0.0);
    }

    #[test]
    fn r20_boundary() {
        let mut ranking: Vec<String> = (0..25).map(|i| format!("filler sentence {i}")).collect();
        ranking[2] = "the city is Paris today".into();
        assert_eq!(r20(&ranking, &g(&["Paris"])), 1.0);
        ranking[2] = "nothing".into();
        ranking[20] = "Paris".into();
        assert_eq!(r20(&ranking, &g(&["Paris"])), 0.0);
        ranking[19] = "paris!".into();
        assert_eq!(r20(&ranking, &g(&["Paris"])), 1.0);
    }

    #[test]
    fn ratio_cases() {
        let s = ratio_stats(&[0.5, 0.5]);
        assert_eq!((s.mean, s.std), (0.5, 0.0));
        assert_eq!(ratio_stats(&[0.6, 0.1, 0.2]).median, 0.2);
        assert_eq!(ratio_stats(&[0.4, 0.1, 0.2, 0.3]).median, 0.2);
        assert_eq!(ratio_stats(&[]), RatioStats::default());
    }
}
