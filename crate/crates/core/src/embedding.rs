//! Embedding providers, unit-norm vector stores and exact similarity search.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::remote::{JsonClient, RemoteError};
use crate::text::tokens;

pub const DEFAULT_MOCK_DIM: usize = 256;
pub const DEFAULT_MOCK_SEED: u64 = 0x6772_6170_686d_656d;

/// Dense vector with L2 norm 1.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `values`; rejects empty, zero or non-finite input.
    pub fn from_raw(mut values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("empty embedding".into()));
        }
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Validation("embedding has zero or non-finite norm".into()));
        }
        for v in &mut values {
            *v = (*v as f64 / norm) as f32;
        }
        Ok(EmbeddingVector(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

/// Dot product with a fixed 8-lane accumulation order, so results are
/// bit-identical across runs while still vectorizing.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let lanes = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    (lanes + tail) as f64
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextKind {
    Phrase,
    Passage,
    Triple,
    Query,
}

pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Stable description recorded in the index manifest.
    fn fingerprint(&self) -> String;

    /// One unit-norm vector per input, in input order.
    fn embed(&self, texts: &[String], kind: TextKind) -> Result<Vec<EmbeddingVector>>;

    fn embed_one(&self, text: &str, kind: TextKind) -> Result<EmbeddingVector> {
        let mut out = self.embed(&[text.to_string()], kind)?;
        out.pop()
            .ok_or_else(|| Error::Config("provider returned no embedding".into()))
    }
}

/// Signed feature hashing of word unigrams and character 3-grams.
///
/// Each word contributes a unigram feature (weight 1) and the trigrams of
/// `#word#` (weight 0.5 each). Hashing is FNV-1a over a fixed seed, so vectors
/// are identical on every platform.
#[derive(Clone, Debug)]
pub struct MockEmbedder {
    dim: usize,
    seed: u64,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder::new(DEFAULT_MOCK_DIM)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, tag: u8, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in std::iter::once(&tag).chain(bytes) {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    // final avalanche so low bits depend on every input byte
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        MockEmbedder::with_seed(dim, DEFAULT_MOCK_SEED)
    }

    pub fn with_seed(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        MockEmbedder { dim, seed }
    }

    fn add_feature(&self, acc: &mut [f32], tag: u8, bytes: &[u8], weight: f32) {
        let h = fnv1a(self.seed, tag, bytes);
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        acc[bucket] += sign * weight;
    }

    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut acc = vec![0f32; self.dim];
        let words = tokens(text);
        for word in &words {
            self.add_feature(&mut acc, b'w', word.as_bytes(), 1.0);
            let padded: Vec<char> = std::iter::once('#')
                .chain(word.chars())
                .chain(std::iter::once('#'))
                .collect();
            for gram in padded.windows(3) {
                let g: String = gram.iter().collect();
                self.add_feature(&mut acc, b'c', g.as_bytes(), 0.5);
            }
        }
        if acc.iter().all(|&v| v == 0.0) {
            // no alphanumeric content (or exact cancellation): hash the raw string
            self.add_feature(&mut acc, b'r', text.as_bytes(), 1.0);
        }
        EmbeddingVector::from_raw(acc).expect("hashed feature vector is non-zero")
    }
}

impl EmbeddingProvider for MockEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("mock-hash-v1:dim={}:seed={:016x}", self.dim, self.seed)
    }

    fn embed(&self, texts: &[String], _kind: TextKind) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Precondition("embed called with no texts".into()));
        }
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Mock,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingProviderConfig {
    pub mode: ProviderMode,
    pub endpoint: Option<String>,
    pub dim: usize,
    pub batch_size: usize,
    pub timeout_ms: u64,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        EmbeddingProviderConfig {
            mode: ProviderMode::Mock,
            endpoint: None,
            dim: DEFAULT_MOCK_DIM,
            batch_size: 64,
            timeout_ms: 30_000,
        }
    }
}

impl EmbeddingProviderConfig {
    pub fn build(&self) -> Result<Arc<dyn EmbeddingProvider>> {
        if self.dim == 0 {
            return Err(Error::Config("embedding dim must be positive".into()));
        }
        match self.mode {
            ProviderMode::Mock => Ok(Arc::new(MockEmbedder::new(self.dim))),
            ProviderMode::Remote => {
                let endpoint = self
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| Error::Config("remote embedding provider needs an endpoint".into()))?;
                Ok(Arc::new(RemoteEmbedder::new(endpoint, self.dim, self.batch_size, self.timeout_ms)))
            }
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

/// Client for an embedding service speaking
/// `{"texts": [...]}` → `{"embeddings": [[...], ...]}`.
#[derive(Clone, Debug)]
pub struct RemoteEmbedder {
    client: JsonClient,
    endpoint: String,
    dim: usize,
    batch_size: usize,
}

impl RemoteEmbedder {
    pub fn new(endpoint: &str, dim: usize, batch_size: usize, timeout_ms: u64) -> Self {
        RemoteEmbedder {
            client: JsonClient::new(endpoint, timeout_ms),
            endpoint: endpoint.to_string(),
            dim,
            batch_size: batch_size.max(1),
        }
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("remote:{}:dim={}", self.endpoint, self.dim)
    }

    fn embed(&self, texts: &[String], _kind: TextKind) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Precondition("embed called with no texts".into()));
        }
        let mut out = Vec::with_capacity(texts.len());
        for (batch, chunk) in texts.chunks(self.batch_size).enumerate() {
            let response: EmbedResponse = self
                .client
                .post(&EmbedRequest { texts: chunk })
                .map_err(|e| Error::Provider {
                    provider: "embedding",
                    batch: Some(batch),
                    retryable: matches!(e, RemoteError::Transport(_)),
                    message: e.to_string(),
                })?;
            if response.embeddings.len() != chunk.len() {
                return Err(Error::Provider {
                    provider: "embedding",
                    batch: Some(batch),
                    retryable: false,
                    message: format!("expected {} embeddings, got {}", chunk.len(), response.embeddings.len()),
                });
            }
            for values in response.embeddings {
                if values.len() != self.dim {
                    return Err(Error::Config(format!(
                        "embedding dimension mismatch: service returned {}, index expects {}",
                        values.len(),
                        self.dim
                    )));
                }
                out.push(EmbeddingVector::from_raw(values)?);
            }
        }
        Ok(out)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreKind {
    Phrase,
    Passage,
    Triple,
}

impl StoreKind {
    pub fn name(self) -> &'static str {
        match self {
            StoreKind::Phrase => "phrase",
            StoreKind::Passage => "passage",
            StoreKind::Triple => "triple",
        }
    }
}

/// Contiguous row-major store of unit vectors keyed by node or triple id.
#[derive(Clone, PartialEq)]
pub struct VectorStore {
    kind: StoreKind,
    dim: usize,
    ids: Vec<u32>,
    data: Vec<f32>,
}

impl fmt::Debug for VectorStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorStore")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("len", &self.ids.len())
            .finish()
    }
}

impl VectorStore {
    pub fn new(kind: StoreKind, dim: usize) -> Self {
        VectorStore {
            kind,
            dim,
            ids: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn kind(&self) -> StoreKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub(crate) fn raw_data(&self) -> &[f32] {
        &self.data
    }

    pub fn push(&mut self, id: u32, vector: &EmbeddingVector) -> Result<()> {
        if vector.dim() != self.dim {
            return Err(Error::Config(format!(
                "{} store expects dim {}, got {}",
                self.kind.name(),
                self.dim,
                vector.dim()
            )));
        }
        self.ids.push(id);
        self.data.extend_from_slice(vector.values());
        Ok(())
    }

    /// Restores a store from raw rows without renormalizing.
    pub(crate) fn from_parts(kind: StoreKind, dim: usize, ids: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() != ids.len() * dim {
            return Err(Error::Validation("vector store shape mismatch".into()));
        }
        Ok(VectorStore { kind, dim, ids, data })
    }

    pub fn row(&self, pos: usize) -> &[f32] {
        &self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn get(&self, id: u32) -> Option<&[f32]> {
        // ids are appended in ascending order during indexing
        match self.ids.binary_search(&id) {
            Ok(pos) => Some(self.row(pos)),
            Err(_) => self.ids.iter().position(|&x| x == id).map(|pos| self.row(pos)),
        }
    }

    /// Similarity of `query` against every entry, in store order.
    pub fn scores(&self, query: &[f32]) -> Vec<f64> {
        (0..self.len()).map(|i| dot(self.row(i), query)).collect()
    }
}

/// Descending by score, then ascending by id.
pub fn rank_order(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Sorts `(id, score)` pairs and keeps the best `k`.
pub fn top_k_of(mut scored: Vec<(u32, f64)>, k: usize) -> Vec<(u32, f64)> {
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored
}

/// Exact top-k by dot product (cosine for unit vectors). Empty store yields an empty list.
pub fn top_k_similar(query: &EmbeddingVector, store: &VectorStore, k: usize) -> Result<Vec<(u32, f64)>> {
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    if store.is_empty() {
        return Ok(Vec::new());
    }
    if query.dim() != store.dim() {
        return Err(Error::Config(format!(
            "query dim {} does not match {} store dim {}",
            query.dim(),
            store.kind().name(),
            store.dim()
        )));
    }
    let scored = store
        .ids()
        .iter()
        .zip(store.scores(query.values()))
        .map(|(&id, s)| (id, s))
        .collect();
    Ok(top_k_of(scored, k))
}

/// All unordered pairs with similarity ≥ `threshold`, each once, `(i, j)` in store order.
pub fn detect_synonyms(store: &VectorStore, threshold: f64) -> Result<Vec<(u32, u32, f64)>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Validation(format!("synonym threshold {threshold} outside (0, 1]")));
    }
    Ok(synonym_pairs(store, threshold, 0))
}

/// Pairs `(i, j)` with `i < j` and `j >= first_new`; with `first_new == 0` this is every pair.
pub(crate) fn synonym_pairs(store: &VectorStore, threshold: f64, first_new: usize) -> Vec<(u32, u32, f64)> {
    let mut out = Vec::new();
    for j in first_new.max(1)..store.len() {
        let rj = store.row(j);
        for i in 0..j {
            let s = dot(store.row(i), rj);
            if s >= threshold {
                out.push((store.ids()[i], store.ids()[j], s.min(1.0)));
            }
        }
    }
    out.sort_by_key(|&(a, b, _)| (a, b));
    out
}
