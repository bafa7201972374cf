//! Generated corpora with known evidentiality, plus scripted oracles that
//! reproduce those labels when mined.
//!
//! * [`separable_corpus`]: every question has 2 strong, 6 weak and 12
//!   distractor sentences, told apart by class cue words.
//! * [`density_corpus`]: `n_docs` documents of three sentences around one
//!   evidence sentence, with `n_docs / 5` distractors that make the oracle
//!   answer wrongly whenever one precedes the evidence.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{DocumentRecord, QuestionRecord};
use crate::miner::{EvidentialityLabel, MinedDataset, MinedQuestion, SentenceDiagnostics, SentenceLabel};
use crate::oracle::{Condition, ScriptedOracle, ScriptedOracleTable};

pub const UNKNOWN: &str = "unknown";

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<QuestionRecord>,
    /// Labels by construction, in the miner's format.
    pub labels: MinedDataset,
    pub oracle: ScriptedOracleTable,
}

impl SyntheticCorpus {
    pub fn oracle(&self) -> ScriptedOracle {
        ScriptedOracle::new(self.oracle.clone())
    }

    /// Splits off the last `n` questions.
    pub fn split_off(&mut self, n: usize) -> SyntheticCorpus {
        let at = self.records.len().saturating_sub(n);
        SyntheticCorpus {
            records: self.records.split_off(at),
            labels: MinedDataset {
                questions: self.labels.questions.split_off(at),
            },
            oracle: self.oracle.clone(),
        }
    }
}

fn filler(rng: &mut impl Rng, n: usize) -> String {
    (0..n)
        .map(|_| format!("w{}", rng.random_range(0..400)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lays sentences out as documents of `per_doc` sentences and returns the
/// record plus the sentence ids in layout order.
fn layout(
    qid: &str,
    question: String,
    gold: String,
    sentences: &[String],
    per_doc: usize,
) -> (QuestionRecord, Vec<String>) {
    let mut documents = Vec::new();
    let mut sids = Vec::new();
    for (d, chunk) in sentences.chunks(per_doc).enumerate() {
        let id = format!("{qid}-d{d}");
        for p in 0..chunk.len() {
            sids.push(format!("{id}:{p}"));
        }
        documents.push(DocumentRecord {
            id,
            title: None,
            body: chunk.join(" "),
        });
    }
    (
        QuestionRecord {
            id: qid.to_owned(),
            question,
            gold_answers: vec![gold],
            documents,
        },
        sids,
    )
}

fn mined(qid: &str, sids: Vec<String>, labels: Vec<EvidentialityLabel>) -> MinedQuestion {
    MinedQuestion {
        qid: qid.to_owned(),
        closed_book_correct: false,
        has_strong: labels.contains(&EvidentialityLabel::Strong),
        labels: sids
            .into_iter()
            .zip(labels)
            .map(|(sid, label)| SentenceLabel {
                sid,
                label,
                diagnostics: SentenceDiagnostics::default(),
            })
            .collect(),
        closed_book_answer: None,
        oracle_calls: 0,
    }
}

const RELATIONS: [&str; 8] = ["color", "owner", "origin", "weight", "shape", "price", "maker", "size"];

/// Questions with 2 strong, 6 weak and 12 distractor sentences each, shuffled
/// over four documents of five sentences.
///
/// Strong sentences carry the answer and `proof` cues, weak ones name the
/// item with `hint` cues, distractors carry `noise` cues. The oracle answers
/// iff the context holds the answer and no `noise` word.
pub fn separable_corpus(n_questions: usize, seed: u64) -> SyntheticCorpus {
    use EvidentialityLabel::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_questions);
    let mut questions = Vec::with_capacity(n_questions);
    let mut table = ScriptedOracleTable {
        default_answer: UNKNOWN.into(),
        ..Default::default()
    };
    for i in 0..n_questions {
        let qid = format!("s{i}");
        let rel = RELATIONS[rng.random_range(0..RELATIONS.len())];
        let question = format!("Which {rel} belongs to item{i}?");
        let gold = format!("code{i}k");
        let mut sents: Vec<(String, EvidentialityLabel)> = Vec::with_capacity(20);
        for _ in 0..2 {
            let (a, b) = (rng.random_range(0..4), rng.random_range(0..4));
            let f = filler(&mut rng, 2);
            sents.push((format!("Item{i} {rel} proof{a} proof{b} {gold} {f}."), Strong));
        }
        for _ in 0..6 {
            let (a, b) = (rng.random_range(0..4), rng.random_range(0..4));
            let f = filler(&mut rng, 3);
            sents.push((format!("Item{i} hint{a} hint{b} {f}."), Weak));
        }
        for _ in 0..12 {
            let (a, b) = (rng.random_range(0..4), rng.random_range(0..4));
            let f = filler(&mut rng, 4);
            sents.push((format!("Noise{a} noise{b} {f}."), Distractor));
        }
        sents.shuffle(&mut rng);
        let texts: Vec<String> = sents.iter().map(|(t, _)| t.clone()).collect();
        let (record, sids) = layout(&qid, question.clone(), gold.clone(), &texts, 5);
        table = table.rule(
            Condition::all(vec![
                Condition::question_is(question),
                Condition::contains(gold.as_str()),
                Condition::Not {
                    condition: Box::new(Condition::contains(" noise")),
                },
            ]),
            gold,
        );
        records.push(record);
        questions.push(mined(&qid, sids, sents.into_iter().map(|(_, l)| l).collect()));
    }
    SyntheticCorpus {
        records,
        labels: MinedDataset { questions },
        oracle: table,
    }
}

/// `n_questions` questions over `n_docs` documents of three sentences each:
/// one evidence sentence, `max(1, n_docs / 5)` distractors, filler elsewhere,
/// all placed at random.
///
/// Evidence reads "Records confirm the <attr> of <entity> is <answer>.";
/// distractors are on-topic rumours with other values. The oracle answers
/// wrongly if any distractor precedes the evidence, correctly if the evidence
/// is present, and "unknown" otherwise, so mining labels filler as weak.
pub fn density_corpus(n_questions: usize, n_docs: usize, seed: u64) -> SyntheticCorpus {
    use EvidentialityLabel::*;
    assert!(n_docs >= 1, "need at least one document");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_doc = 3;
    let total = n_docs * per_doc;
    let n_distractors = (n_docs / 5).max(1).min(total - 1);
    let mut records = Vec::with_capacity(n_questions);
    let mut questions = Vec::with_capacity(n_questions);
    let mut table = ScriptedOracleTable {
        default_answer: UNKNOWN.into(),
        ..Default::default()
    };
    for i in 0..n_questions {
        let qid = format!("n{n_docs}q{i}");
        let attr = RELATIONS[rng.random_range(0..RELATIONS.len())];
        let entity = format!("unit{i}n{n_docs}");
        let question = format!("What is the {attr} of {entity}?");
        let gold = format!("val{i}z{}", rng.random_range(0..1000));
        let evidence = format!("Records confirm the {attr} of {entity} is {gold}.");
        let distractors: Vec<String> = (0..n_distractors)
            .map(|j| format!("Rumors claim the {attr} of {entity} is val{i}r{j}."))
            .collect();

        let mut sents: Vec<(String, EvidentialityLabel)> = vec![(evidence.clone(), Strong)];
        sents.extend(distractors.iter().map(|d| (d.clone(), Distractor)));
        while sents.len() < total {
            let f = filler(&mut rng, 6);
            sents.push((format!("Meanwhile {f}."), Weak));
        }
        sents.shuffle(&mut rng);
        let texts: Vec<String> = sents.iter().map(|(t, _)| t.clone()).collect();
        let (record, sids) = layout(&qid, question.clone(), gold.clone(), &texts, per_doc);

        table = table
            .rule(
                Condition::all(vec![
                    Condition::question_is(question.as_str()),
                    Condition::AnyBefore {
                        candidates: distractors,
                        anchor: evidence.clone(),
                    },
                ]),
                format!("val{i}wrong"),
            )
            .rule(
                Condition::all(vec![Condition::question_is(question), Condition::contains(evidence)]),
                gold,
            );
        records.push(record);
        questions.push(mined(&qid, sids, sents.into_iter().map(|(_, l)| l).collect()));
    }
    SyntheticCorpus {
        records,
        labels: MinedDataset { questions },
        oracle: table,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenizerConfig;
    use crate::miner::{mine_dataset, MinerConfig};

    fn check_mining(corpus: &SyntheticCorpus) {
        let oracle = corpus.oracle();
        let (mined, stats) = mine_dataset(
            &corpus.records,
            &oracle,
            &MinerConfig::default(),
            &TokenizerConfig::default(),
        );
        assert!(stats.failures.is_empty());
        for (got, want) in mined.questions.iter().zip(&corpus.labels.questions) {
            let g: Vec<_> = got.labels.iter().map(|l| (&l.sid, l.label)).collect();
            let w: Vec<_> = want.labels.iter().map(|l| (&l.sid, l.label)).collect();
            assert_eq!(g, w, "question {}", got.qid);
        }
    }

    #[test]
    fn separable_shape_and_mining_agree() {
        let c = separable_corpus(12, 5);
        let tok = TokenizerConfig::default();
        for (r, q) in c.records.iter().zip(&c.labels.questions) {
            assert_eq!(r.sentences(&tok).len(), 20);
            assert_eq!(q.count(EvidentialityLabel::Strong), 2);
            assert_eq!(q.count(EvidentialityLabel::Weak), 6);
            assert_eq!(q.count(EvidentialityLabel::Distractor), 12);
        }
        check_mining(&c);
    }

    #[test]
    fn density_shape_and_mining_agree() {
        for n in [5, 20] {
            let c = density_corpus(6, n, 9);
            let tok = TokenizerConfig::default();
            for (r, q) in c.records.iter().zip(&c.labels.questions) {
                assert_eq!(r.documents.len(), n);
                assert_eq!(r.sentences(&tok).len(), 3 * n);
                assert_eq!(q.count(EvidentialityLabel::Distractor), (n / 5).max(1));
            }
            check_mining(&c);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let a = density_corpus(3, 5, 1);
        let b = density_corpus(3, 5, 1);
        assert_eq!(a.records, b.records);
        assert_ne!(a.records, density_corpus(3, 5, 2).records);
    }
}
