//! Evidentiality-guided adaptive context compression for retrieval-augmented
//! generation.
//!
//! The pipeline has four stages, each usable on its own:
//!
//! 1. [`miner`] labels every retrieved sentence as strong evidence, weak
//!    evidence or distractor by probing an answer [`oracle`].
//! 2. [`encoder`] trains a dual encoder with two InfoNCE objectives so that
//!    strong evidence scores above weak evidence, which scores above
//!    distractors.
//! 3. [`evaluator`] judges whether a compressed context is sufficient to
//!    answer the question.
//! 4. [`compressor`] ranks sentences with the encoder and grows the selected
//!    prefix until the evaluator accepts it or a limit binds.
//!
//! [`harness`] provides the QA metrics (EM, F1, NDCG, R20) and the strategy
//! comparison runner. [`synthetic`] generates the fixture corpora used by the
//! test suites and benchmarks.
//!
//! With the default `parallel` feature, per-question work (mining, scoring,
//! compression, benchmarking) runs on the rayon global pool. Without it every
//! loop runs sequentially and produces identical results.

pub mod compressor;
pub mod corpus;
pub mod encoder;
pub mod evaluator;
pub mod harness;
pub mod io;
pub mod miner;
pub mod oracle;
pub mod par;
pub mod synthetic;

pub use compressor::{
    adaptive_compress, compress_dataset, rank_sentences, CompressionLimits, CompressionResult,
    RankedEvidence, StopReason,
};
pub use corpus::{
    count_tokens, load_dataset, normalize_answer, split_sentences, DocumentRecord, QuestionRecord,
    SentenceUnit, TokenizerConfig,
};
pub use encoder::{EncoderModel, TrainConfig, TrainingBatch};
pub use evaluator::{Evaluator, Probe, Verdict};
pub use miner::{mine_dataset, mine_question, EvidentialityLabel, MinedDataset};
pub use oracle::{AnswerAttempt, Oracle, OracleRequest};
