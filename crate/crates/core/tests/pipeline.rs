//! Cross-module behaviour: trainset selection, evaluator training, dataset
//! compression and benchmark runs on scripted fixtures.

use std::collections::HashSet;
use std::sync::Arc;

use ecorag::compressor::{
    adaptive_compress, compress_dataset, rank_sentences, CompressionLimits, StopReason,
};
use ecorag::corpus::{count_tokens, DocumentRecord, QuestionRecord, SentenceUnit, TokenizerConfig};
use ecorag::encoder::{train, EncoderModel, TrainConfig};
use ecorag::evaluator::{
    build_trainset, features, train_evaluator, ClassifierEvaluator, EvalTrainConfig,
    EvaluatorClassifier, EvaluatorTrainSet, OracleEvaluator,
};
use ecorag::harness::{
    compression_ratio_stats, ratio_stats, run_benchmark, write_reports, BenchOptions, Components,
    StrategyKind, StrategySpec,
};
use ecorag::miner::{EvidentialityLabel, MinedDataset, MinedQuestion, SentenceDiagnostics, SentenceLabel};
use ecorag::oracle::{MatchMode, ScriptedOracle};
use ecorag::synthetic::{density_corpus, separable_corpus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tok() -> TokenizerConfig {
    TokenizerConfig::default()
}

/// One question whose single document holds `strong` strong sentences and
/// `other` weak/distractor sentences.
fn labelled(strong: usize, other: usize) -> (Vec<QuestionRecord>, MinedDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(strong as u64 * 1000 + other as u64);
    let n = strong + other;
    let body = (0..n)
        .map(|i| format!("Sentence{i} w{} w{} w{}.", rng.random_range(0..50), rng.random_range(0..50), rng.random_range(0..50)))
        .collect::<Vec<_>>()
        .join(" ");
    let record = QuestionRecord {
        id: "q".into(),
        question: "which w1 w2 w3".into(),
        gold_answers: vec!["x".into()],
        documents: vec![DocumentRecord {
            id: "d".into(),
            title: None,
            body,
        }],
    };
    let labels = (0..n)
        .map(|i| SentenceLabel {
            sid: format!("d:{i}"),
            label: if i < strong {
                EvidentialityLabel::Strong
            } else if i % 2 == 0 {
                EvidentialityLabel::Weak
            } else {
                EvidentialityLabel::Distractor
            },
            diagnostics: SentenceDiagnostics::default(),
        })
        .collect();
    let mined = MinedDataset {
        questions: vec![MinedQuestion {
            qid: "q".into(),
            closed_book_correct: false,
            has_strong: strong > 0,
            labels,
            closed_book_answer: None,
            oracle_calls: 0,
        }],
    };
    (vec![record], mined)
}

#[test]
fn trainset_takes_top_scoring_negatives() {
    let tok = tok();
    let encoder = EncoderModel::random(8, 256, 0, 0.5, 4);
    let (records, mined) = labelled(10, 100);
    let set = build_trainset(&mined, &records, &encoder, 3, &tok, false).unwrap();
    assert_eq!(set.positives.len(), 10);
    assert_eq!(set.negatives.len(), 30);
    assert_eq!(set.shortfall, 0);

    // brute force: sort every non-strong sentence by similarity
    let sentences = records[0].sentences(&tok);
    let mut all: Vec<(f64, String)> = sentences[10..]
        .iter()
        .map(|s| (encoder.similarity(&records[0].question, &s.text), s.text.clone()))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let want: HashSet<&str> = all[..30].iter().map(|(_, t)| t.as_str()).collect();
    let got: HashSet<&str> = set.negatives.iter().map(|e| e.text.as_str()).collect();
    assert_eq!(got, want);
    assert!(set.negatives.windows(2).all(|w| w[0].score >= w[1].score));
}

#[test]
fn trainset_reports_shortfall_and_needs_strong() {
    let tok = tok();
    let encoder = EncoderModel::random(8, 256, 0, 0.5, 4);
    let (records, mined) = labelled(10, 20);
    let set = build_trainset(&mined, &records, &encoder, 3, &tok, false).unwrap();
    assert_eq!((set.positives.len(), set.negatives.len(), set.shortfall), (10, 20, 10));

    let (records, mined) = labelled(0, 20);
    assert!(build_trainset(&mined, &records, &encoder, 3, &tok, false).is_err());
}

#[test]
fn augmentation_adds_concatenated_contexts() {
    let tok = tok();
    let corpus = separable_corpus(5, 1);
    let encoder = EncoderModel::random(8, 256, 0, 0.5, 4);
    let plain = build_trainset(&corpus.labels, &corpus.records, &encoder, 3, &tok, false).unwrap();
    let aug = build_trainset(&corpus.labels, &corpus.records, &encoder, 3, &tok, true).unwrap();
    assert_eq!(aug.positives.len(), plain.positives.len() + 5);
    assert_eq!(aug.negatives.len(), plain.negatives.len() + 5);
    let extra = aug.positives.last().unwrap();
    assert!(extra.text.contains("proof"));
    assert!(count_tokens(&extra.text, &tok) > 8);
}

fn separable_trainset(encoder: &EncoderModel, corpus: &ecorag::synthetic::SyntheticCorpus) -> EvaluatorTrainSet {
    build_trainset(&corpus.labels, &corpus.records, encoder, 3, &tok(), false).unwrap()
}

#[test]
fn evaluator_generalizes_on_separable_fixture() {
    let tok = tok();
    let mut corpus = separable_corpus(120, 11);
    let held = corpus.split_off(30);
    let cfg = TrainConfig {
        learning_rate: 0.1,
        epochs: 5,
        bucket_count: 8192,
        ..Default::default()
    };
    let (encoder, _) = train(&corpus.labels, &corpus.records, &cfg, &tok).unwrap();
    let (clf, report) = train_evaluator(&separable_trainset(&encoder, &corpus), &encoder, &tok, &Default::default()).unwrap();
    assert!(report.losses.windows(2).all(|w| w[1] <= w[0] + 1e-12));

    let test = separable_trainset(&encoder, &held);
    let mut correct = 0;
    for (examples, label) in [(&test.positives, true), (&test.negatives, false)] {
        for e in examples {
            let p = clf.probability(&features(&encoder, &tok, &e.question, &e.text));
            correct += usize::from((p >= 0.5) == label);
        }
    }
    let acc = correct as f64 / (test.positives.len() + test.negatives.len()) as f64;
    assert!(acc >= 0.9, "held-out accuracy {acc}");
}

#[test]
fn evaluator_zero_epochs_and_determinism() {
    let tok = tok();
    let corpus = separable_corpus(20, 2);
    let encoder = EncoderModel::random(4, 512, 0, 0.3, 9);
    let set = separable_trainset(&encoder, &corpus);
    let zero = EvalTrainConfig {
        epochs: 0,
        ..Default::default()
    };
    let (clf, _) = train_evaluator(&set, &encoder, &tok, &zero).unwrap();
    assert!(clf.weights.iter().all(|&w| w == 0.0));
    assert_eq!(clf.bias, 0.0);

    let a = train_evaluator(&set, &encoder, &tok, &Default::default()).unwrap().0;
    let b = train_evaluator(&set, &encoder, &tok, &Default::default()).unwrap().0;
    assert_eq!(a, b);
}

#[test]
fn ranking_matches_brute_force_sort() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let model = EncoderModel::random(6, 64, 0, 0.5, 1);
    let sentences: Vec<SentenceUnit> = (0..1000)
        .map(|i| {
            // few distinct texts so ties are common
            let text = format!("w{} w{}", rng.random_range(0..8), rng.random_range(0..8));
            SentenceUnit {
                id: format!("d{}:{}", i % 17, i),
                doc_id: format!("d{}", i % 17),
                doc_rank: i % 17,
                position: i,
                token_count: 2,
                char_span: (0, text.len()),
                text,
            }
        })
        .collect();
    let ranked = rank_sentences(&model, "w1 w5", sentences.clone());
    let mut brute: Vec<(f64, usize, usize)> = sentences
        .iter()
        .map(|s| (model.similarity("w1 w5", &s.text), s.doc_rank, s.position))
        .collect();
    brute.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let got: Vec<(f64, usize, usize)> = ranked.items.iter().map(|(s, sc)| (*sc, s.doc_rank, s.position)).collect();
    assert_eq!(got, brute);
}

#[test]
fn dataset_compression_matches_individual_traces() {
    let tok = tok();
    let corpus = density_corpus(3, 5, 21);
    let oracle = ScriptedOracle::new(corpus.oracle.clone());
    let eval = OracleEvaluator::new(&oracle, MatchMode::Containment);
    let model = EncoderModel::random(8, 1024, 0, 0.4, 5);
    let limits = CompressionLimits::default();
    let run = compress_dataset(&corpus.records, &model, &eval, &limits, &tok, true).unwrap();
    assert_eq!(run.results.len(), 3);
    for (record, result) in corpus.records.iter().zip(&run.results) {
        let ranked = rank_sentences(&model, &record.question, record.sentences(&tok));
        let single = adaptive_compress(record, &ranked, &eval, &limits, &tok).unwrap();
        assert_eq!(&single, result);
    }
    let mean = run.results.iter().map(|r| r.token_count as f64).sum::<f64>() / 3.0;
    assert_eq!(run.summary.mean_tokens, mean);
}

#[test]
fn oracle_evaluator_finds_planted_evidence() {
    // with a random encoder the evidence lands anywhere; whenever it is in
    // the top max_pieces ranks the loop must stop on it
    let tok = tok();
    let corpus = density_corpus(30, 5, 8);
    let oracle = ScriptedOracle::new(corpus.oracle.clone());
    let eval = OracleEvaluator::new(&oracle, MatchMode::Containment);
    let model = EncoderModel::random(8, 1024, 0, 0.4, 6);
    let limits = CompressionLimits::default();
    let mut checked = 0;
    for (record, labels) in corpus.records.iter().zip(&corpus.labels.questions) {
        let ranked = rank_sentences(&model, &record.question, record.sentences(&tok));
        let evidence = labels
            .labels
            .iter()
            .find(|l| l.label == EvidentialityLabel::Strong)
            .unwrap()
            .sid
            .clone();
        let rank = ranked.sentences().position(|s| s.id == evidence).unwrap();
        let res = adaptive_compress(record, &ranked, &eval, &limits, &tok).unwrap();
        if rank < limits.max_pieces {
            // a distractor ranked above the evidence can still spoil a step,
            // but the evidence is always selected before the loop ends
            assert!(res.selected.iter().any(|s| s.id == evidence));
            if ranked.sentences().take(rank).all(|s| labels.label_of(&s.id) != Some(EvidentialityLabel::Distractor)) {
                assert_eq!(res.stop_reason, StopReason::Evidential);
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn adaptive_beats_topk_on_tokens() {
    let corpus = density_corpus(10, 20, 4);
    let oracle = ScriptedOracle::new(corpus.oracle.clone());
    // an encoder that puts "records confirm" first
    let mut model = EncoderModel::zeros(2, 4096, 0);
    for word in ["records", "confirm"] {
        let b = model.bucket(word);
        model.table_mut(ecorag::encoder::Side::Doc)[b * 2] = 4.0;
    }
    for word in ["what", "is", "the", "of"] {
        let b = model.bucket(word);
        model.table_mut(ecorag::encoder::Side::Query)[b * 2] = 1.0;
    }
    let eval = OracleEvaluator::new(&oracle, MatchMode::Containment);
    let strategies = vec![
        StrategySpec::new("cb", StrategyKind::ClosedBook),
        StrategySpec::topk("top20", 20),
        StrategySpec::new("eco", StrategyKind::EcoragAdaptive),
    ];
    let components = Components {
        encoder: Some(&model),
        evaluator: Some(&eval),
        labels: Some(&corpus.labels),
    };
    let opts = BenchOptions {
        record_timing: false,
        ..Default::default()
    };
    let reports = run_benchmark(&corpus.records, &strategies, &oracle, components, &opts).unwrap();
    assert_eq!(reports[0].em, 0.0);
    assert_eq!(reports[2].em, 100.0);
    assert!(reports[2].mean_tokens <= reports[1].mean_tokens);
    assert_eq!(reports[2].ndcg["ndcg@1"], 1.0);
    assert_eq!(reports[2].r20, Some(1.0));
    for r in &reports {
        for row in &r.rows {
            assert!(row.em == 0.0 || row.f1 == 1.0);
        }
    }

    // two runs give byte-identical files
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    write_reports(dir_a.path(), &reports).unwrap();
    let again = run_benchmark(&corpus.records, &strategies, &oracle, components, &opts).unwrap();
    write_reports(dir_b.path(), &again).unwrap();
    for name in ["cb.json", "top20.csv", "eco.json", "comparison.txt"] {
        assert_eq!(
            std::fs::read(dir_a.path().join(name)).unwrap(),
            std::fs::read(dir_b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn classifier_evaluator_plugs_into_compression() {
    let tok = tok();
    let encoder = Arc::new(EncoderModel::random(4, 256, 0, 0.5, 2));
    let clf = EvaluatorClassifier {
        weights: vec![0.0; 14],
        bias: -1.0,
        encoder_fingerprint: encoder.fingerprint(),
    };
    let eval = ClassifierEvaluator::new(clf, encoder.clone(), tok.clone()).unwrap();
    let corpus = density_corpus(2, 10, 3);
    let limits = CompressionLimits {
        max_pieces: 8,
        ..Default::default()
    };
    let run = compress_dataset(&corpus.records, &encoder, &eval, &limits, &tok, true).unwrap();
    for r in &run.results {
        assert_eq!(r.stop_reason, StopReason::PieceLimit);
        assert_eq!(r.selected.len(), 8);
    }
    let other = EncoderModel::random(4, 256, 0, 0.5, 3);
    assert!(compress_dataset(&corpus.records, &other, &eval, &limits, &tok, true).is_err());
}

#[test]
fn ratio_std_matches_two_pass_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let n = rng.random_range(1..40);
        let ratios: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let s = ratio_stats(&ratios);
        let mean: f64 = ratios.iter().sum::<f64>() / n as f64;
        let mut var = 0.0;
        for r in &ratios {
            var += (r - mean).powi(2);
        }
        var /= n as f64;
        assert!((s.std - var.sqrt()).abs() < 1e-12);
        assert!((s.mean - mean).abs() < 1e-12);
    }
}

#[test]
fn zero_token_originals_are_excluded() {
    let tok = tok();
    let corpus = density_corpus(2, 5, 1);
    let model = EncoderModel::random(4, 256, 0, 0.5, 2);
    let oracle = ScriptedOracle::new(corpus.oracle.clone());
    let eval = OracleEvaluator::new(&oracle, MatchMode::Containment);
    let run = compress_dataset(&corpus.records, &model, &eval, &Default::default(), &tok, true).unwrap();
    let originals: Vec<usize> = corpus
        .records
        .iter()
        .map(|r| count_tokens(&r.full_context(), &tok))
        .collect();
    let stats = compression_ratio_stats(&run.results, &[originals[0], 0]);
    assert_eq!((stats.count, stats.excluded), (1, 1));
    let stats = compression_ratio_stats(&run.results, &originals);
    assert!(stats.max <= 1.0 && stats.min > 0.0);
}
