use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::{token_slices, TokenizerMode};
use crate::par;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// 64-bit FNV-1a over the seed's little-endian bytes followed by the token.
pub fn token_hash(hash_seed: u64, token: &str) -> u64 {
    fnv1a(fnv1a(FNV_OFFSET, &hash_seed.to_le_bytes()), token.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Doc,
}

/// Dual bag-of-embeddings encoder.
///
/// Text is split into lowercase alphanumeric tokens, each token is hashed to
/// a bucket, and the embedding is the mean of that side's bucket rows (the
/// zero vector for text without tokens). Similarity is the dot product of the
/// query-side and document-side embeddings.
///
/// Weights are held in `f64` for the numerics but every constructor and
/// optimizer step rounds them to `f32`, the precision of the model file, so
/// a save/load round trip is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    dim: usize,
    bucket_count: usize,
    hash_seed: u64,
    query: Vec<f64>,
    doc: Vec<f64>,
}

impl EncoderModel {
    pub fn zeros(dim: usize, bucket_count: usize, hash_seed: u64) -> Self {
        assert!(dim > 0 && bucket_count > 0, "dim and bucket_count must be positive");
        Self {
            dim,
            bucket_count,
            hash_seed,
            query: vec![0.0; dim * bucket_count],
            doc: vec![0.0; dim * bucket_count],
        }
    }

    /// Weights drawn uniformly from `[-scale, scale]`.
    pub fn random(dim: usize, bucket_count: usize, hash_seed: u64, scale: f64, seed: u64) -> Self {
        let mut m = Self::zeros(dim, bucket_count, hash_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in m.query.iter_mut().chain(m.doc.iter_mut()) {
            *w = quantize(rng.random_range(-scale..=scale));
        }
        m
    }

    /// Builds a model from row-major tables of shape `bucket_count × dim`.
    pub fn from_tables(
        dim: usize,
        bucket_count: usize,
        hash_seed: u64,
        query: Vec<f64>,
        doc: Vec<f64>,
    ) -> Self {
        assert_eq!(query.len(), dim * bucket_count, "query table shape");
        assert_eq!(doc.len(), dim * bucket_count, "doc table shape");
        let mut m = Self {
            dim,
            bucket_count,
            hash_seed,
            query,
            doc,
        };
        m.quantize();
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket_count(&self) -> usize {
        self.bucket_count
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn table(&self, side: Side) -> &[f64] {
        match side {
            Side::Query => &self.query,
            Side::Doc => &self.doc,
        }
    }

    /// Raw table access. Values written here are not rounded to `f32`.
    pub fn table_mut(&mut self, side: Side) -> &mut [f64] {
        match side {
            Side::Query => &mut self.query,
            Side::Doc => &mut self.doc,
        }
    }

    pub fn row(&self, side: Side, bucket: usize) -> &[f64] {
        &self.table(side)[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub(crate) fn row_mut(&mut self, side: Side, bucket: usize) -> &mut [f64] {
        let dim = self.dim;
        &mut self.table_mut(side)[bucket * dim..(bucket + 1) * dim]
    }

    pub fn bucket(&self, token: &str) -> usize {
        (token_hash(self.hash_seed, token) % self.bucket_count as u64) as usize
    }

    /// Bucket of every token of `text`, duplicates included.
    pub fn buckets(&self, text: &str) -> Vec<usize> {
        token_slices(text, TokenizerMode::WhitespacePunct)
            .map(|t| {
                if t.chars().any(char::is_uppercase) {
                    self.bucket(&t.to_lowercase())
                } else {
                    self.bucket(t)
                }
            })
            .collect()
    }

    pub fn pool(&self, side: Side, buckets: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if buckets.is_empty() {
            return out;
        }
        for &b in buckets {
            for (o, w) in out.iter_mut().zip(self.row(side, b)) {
                *o += w;
            }
        }
        let n = buckets.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub fn embed(&self, side: Side, text: &str) -> Vec<f64> {
        self.pool(side, &self.buckets(text))
    }

    pub fn embed_query(&self, question: &str) -> Vec<f64> {
        self.embed(Side::Query, question)
    }

    pub fn embed_doc(&self, sentence: &str) -> Vec<f64> {
        self.embed(Side::Doc, sentence)
    }

    pub fn similarity(&self, question: &str, sentence: &str) -> f64 {
        dot(&self.embed_query(question), &self.embed_doc(sentence))
    }

    /// Similarity of `question` to each sentence, in input order.
    pub fn score_all<S: AsRef<str> + Sync>(&self, question: &str, sentences: &[S]) -> Vec<f64> {
        let q = self.embed_query(question);
        par::map(sentences, |s| dot(&q, &self.embed_doc(s.as_ref())))
    }

    pub fn quantize(&mut self) {
        for w in self.query.iter_mut().chain(self.doc.iter_mut()) {
            *w = quantize(*w);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.query.iter().chain(&self.doc).all(|w| w.is_finite())
    }

    /// Short content hash of the shape, hash seed and both tables.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"ecorag-encoder-v1");
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.bucket_count as u64).to_le_bytes());
        h.update(self.hash_seed.to_le_bytes());
        for w in self.query.iter().chain(&self.doc) {
            h.update((*w as f32).to_le_bytes());
        }
        hex::encode(h.finalize())[..16].to_owned()
    }
}

pub(crate) fn quantize(w: f64) -> f64 {
    w as f32 as f64
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
