//! Online retrieval: link, filter, seed, walk, rank. Falls back to dense
//! passage ranking whenever linking produces no usable seeds.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::{top_k_similar, EmbeddingProvider, EmbeddingVector, TextKind};
use crate::error::{Error, Result};
use crate::extract::Extractor;
use crate::indexer::{Index, IndexMeta};
use crate::kg::{EdgeKind, NodeId, TripleId};
use crate::linker::{
    filter_triples, link_ner_to_nodes, link_query_to_nodes, link_query_to_triples, FailurePolicy, FilterMode,
    FilteredTripleSet, KeepAll, KeepNone, LexicalFilter, LinkMode, ScoredTriple, TripleFilter,
    DEFAULT_TRIPLE_TOP_K,
};
use crate::ppr::{run_ppr, PprParams};
use crate::remote::{JsonClient, RemoteError};
use crate::reset::{
    phrase_scores_from_triples, reset_from_seed_scores, ResetVector, Seed, DEFAULT_MAX_PHRASE_SEEDS,
    DEFAULT_PASSAGE_WEIGHT,
};
use crate::text::{is_stopword, tokens};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub link_mode: LinkMode,
    pub triple_top_k: usize,
    pub filter_mode: FilterMode,
    pub failure_policy: FailurePolicy,
    pub passage_weight: f64,
    pub max_phrase_seeds: usize,
    pub ppr: PprParams,
    pub top_k: usize,
    /// When false, passages are ranked by the PPR mass of their phrases over
    /// the phrase-only graph.
    pub passage_nodes: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            link_mode: LinkMode::Triple,
            triple_top_k: DEFAULT_TRIPLE_TOP_K,
            filter_mode: FilterMode::MockLexical,
            failure_policy: FailurePolicy::FailOpen,
            passage_weight: DEFAULT_PASSAGE_WEIGHT,
            max_phrase_seeds: DEFAULT_MAX_PHRASE_SEEDS,
            ppr: PprParams::default(),
            top_k: DEFAULT_TOP_K,
            passage_nodes: true,
        }
    }
}

impl RetrievalConfig {
    /// Defaults with the damping and passage weight recorded in the index.
    pub fn from_meta(meta: &IndexMeta) -> Self {
        let mut c = RetrievalConfig::default();
        c.ppr.damping = meta.damping;
        c.passage_weight = meta.passage_weight_factor;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 || self.triple_top_k == 0 {
            return Err(Error::Validation("top_k and triple_top_k must be at least 1".into()));
        }
        if !(self.passage_weight > 0.0) {
            return Err(Error::Validation(format!("passage weight {} must be positive", self.passage_weight)));
        }
        if self.max_phrase_seeds == 0 {
            return Err(Error::Validation("max_phrase_seeds must be at least 1".into()));
        }
        self.ppr.validate()
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Pipeline,
    DenseFallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPassage {
    pub node: NodeId,
    pub doc_id: String,
    pub title: Option<String>,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub candidates: Vec<ScoredTriple>,
    pub kept: Vec<ScoredTriple>,
    pub dropped: Vec<TripleId>,
    pub hallucinated: usize,
    pub filter_failed: bool,
    /// Phrase nodes linked directly (node and entity modes).
    pub linked_nodes: Vec<(NodeId, f64)>,
    pub seeds: Vec<Seed>,
    pub ppr_iterations: usize,
    pub ppr_converged: bool,
    pub ppr_residual: f64,
    pub fallback_reason: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTimings {
    pub embed_ms: f64,
    pub link_ms: f64,
    pub filter_ms: f64,
    pub ppr_ms: f64,
    pub rank_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedPassages {
    pub passages: Vec<RankedPassage>,
    pub provenance: Provenance,
    pub diagnostics: Diagnostics,
    pub timings: RetrievalTimings,
}

impl RankedPassages {
    pub fn doc_ids(&self) -> Vec<String> {
        self.passages.iter().map(|p| p.doc_id.clone()).collect()
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Query-time pipeline over a shared frozen index.
#[derive(Clone)]
pub struct Retriever {
    index: Arc<Index>,
    embedder: Arc<dyn EmbeddingProvider>,
    extractor: Arc<dyn Extractor>,
    remote_filter: Option<Arc<dyn TripleFilter>>,
}

impl Retriever {
    pub fn new(index: Arc<Index>, embedder: Arc<dyn EmbeddingProvider>, extractor: Arc<dyn Extractor>) -> Result<Self> {
        if embedder.dim() != index.meta.embedding_dim {
            return Err(Error::Config(format!(
                "embedding provider dim {} does not match index dim {}",
                embedder.dim(),
                index.meta.embedding_dim
            )));
        }
        if embedder.fingerprint() != index.meta.embedder {
            tracing::warn!(
                index = %index.meta.embedder,
                provider = %embedder.fingerprint(),
                "query embedder differs from the one used at index time"
            );
        }
        Ok(Retriever {
            index,
            embedder,
            extractor,
            remote_filter: None,
        })
    }

    /// Client used when the filter mode is `remote`.
    pub fn with_filter(mut self, filter: Arc<dyn TripleFilter>) -> Self {
        self.remote_filter = Some(filter);
        self
    }

    pub fn index(&self) -> &Arc<Index> {
        &self.index
    }

    pub fn embed_query(&self, query: &str) -> Result<EmbeddingVector> {
        if query.trim().is_empty() {
            return Err(Error::Validation("query is empty".into()));
        }
        self.embedder.embed_one(query, TextKind::Query)
    }

    fn filter_for(&self, mode: FilterMode) -> Result<&dyn TripleFilter> {
        Ok(match mode {
            FilterMode::MockKeepAll | FilterMode::KeepAll => &KeepAll,
            FilterMode::MockKeepNone => &KeepNone,
            FilterMode::MockLexical => &LexicalFilter,
            FilterMode::Remote => self
                .remote_filter
                .as_deref()
                .ok_or_else(|| Error::Config("filter mode is remote but no filter endpoint is configured".into()))?,
        })
    }

    fn passage(&self, node: NodeId, score: f64) -> RankedPassage {
        let p = self.index.kg.passage(node).expect("passage store ids are passage nodes");
        RankedPassage {
            node,
            doc_id: p.doc_id.clone(),
            title: p.title.clone(),
            score,
        }
    }

    /// Top-k passages by query–passage similarity.
    pub fn dense_retrieve(&self, query: &str, k: usize) -> Result<RankedPassages> {
        let t = Instant::now();
        let qv = self.embed_query(query)?;
        let embed_ms = ms_since(t);
        let mut out = self.dense_from_vector(&qv, k, Diagnostics::default())?;
        out.timings.embed_ms = embed_ms;
        Ok(out)
    }

    fn dense_from_vector(&self, qv: &EmbeddingVector, k: usize, diagnostics: Diagnostics) -> Result<RankedPassages> {
        let t = Instant::now();
        let passages = top_k_similar(qv, &self.index.passages, k)?
            .into_iter()
            .map(|(id, s)| self.passage(NodeId(id), s))
            .collect();
        Ok(RankedPassages {
            passages,
            provenance: Provenance::DenseFallback,
            diagnostics,
            timings: RetrievalTimings {
                rank_ms: ms_since(t),
                ..Default::default()
            },
        })
    }

    /// Candidate triples for `query` (the first pipeline stage).
    pub fn link_triples(&self, query: &str, k: usize) -> Result<Vec<ScoredTriple>> {
        let qv = self.embed_query(query)?;
        link_query_to_triples(&self.index, &qv, k)
    }

    pub fn retrieve(&self, query: &str, config: &RetrievalConfig) -> Result<RankedPassages> {
        config.validate()?;
        let t = Instant::now();
        let qv = self.embed_query(query)?;
        let embed_ms = ms_since(t);
        let t = Instant::now();
        let mut out = match config.link_mode {
            LinkMode::Triple => {
                let candidates = link_query_to_triples(&self.index, &qv, config.triple_top_k)?;
                let link_ms = ms_since(t);
                let mut out = self.rank_from_candidates(query, &qv, candidates, config)?;
                out.timings.link_ms = link_ms;
                out
            }
            LinkMode::Node | LinkMode::Ner => {
                let linked = if config.link_mode == LinkMode::Node {
                    link_query_to_nodes(&self.index, &qv, config.max_phrase_seeds)?
                } else {
                    link_ner_to_nodes(&self.index, self.embedder.as_ref(), self.extractor.as_ref(), query)?
                };
                let link_ms = ms_since(t);
                let diagnostics = Diagnostics {
                    linked_nodes: linked.clone(),
                    ..Default::default()
                };
                let mut out = self.rank_from_phrase_scores(&qv, &linked, diagnostics, config)?;
                out.timings.link_ms = link_ms;
                out
            }
        };
        out.timings.embed_ms = embed_ms;
        Ok(out)
    }

    /// Runs filtering, seeding and ranking on an explicit candidate list.
    /// `retrieve` in triple mode is exactly this applied to the linked triples.
    pub fn rank_from_candidates(
        &self,
        query: &str,
        qv: &EmbeddingVector,
        candidates: Vec<ScoredTriple>,
        config: &RetrievalConfig,
    ) -> Result<RankedPassages> {
        let mut diagnostics = Diagnostics {
            candidates: candidates.clone(),
            ..Default::default()
        };
        if candidates.is_empty() {
            diagnostics.fallback_reason = Some("no candidate triples".into());
            return self.dense_from_vector(qv, config.top_k, diagnostics);
        }
        let t = Instant::now();
        let filter = self.filter_for(config.filter_mode)?;
        let filtered: FilteredTripleSet = filter_triples(
            &self.index.kg,
            query,
            &candidates,
            filter,
            config.filter_mode,
            config.failure_policy,
        )?;
        let filter_ms = ms_since(t);
        diagnostics.kept = filtered.kept.clone();
        diagnostics.dropped = filtered.dropped.clone();
        diagnostics.hallucinated = filtered.hallucinated;
        diagnostics.filter_failed = filtered.failed;
        if filtered.kept.is_empty() {
            diagnostics.fallback_reason = Some("filter kept no triples".into());
            let mut out = self.dense_from_vector(qv, config.top_k, diagnostics)?;
            out.timings.filter_ms = filter_ms;
            return Ok(out);
        }
        let phrase_scores = phrase_scores_from_triples(&self.index.kg, &filtered);
        let mut out = self.rank_from_phrase_scores(qv, &phrase_scores, diagnostics, config)?;
        out.timings.filter_ms = filter_ms;
        Ok(out)
    }

    fn rank_from_phrase_scores(
        &self,
        qv: &EmbeddingVector,
        phrase_scores: &[(NodeId, f64)],
        mut diagnostics: Diagnostics,
        config: &RetrievalConfig,
    ) -> Result<RankedPassages> {
        let t = Instant::now();
        let passage_scores: Vec<(NodeId, f64)> = if config.passage_nodes {
            let passages = &self.index.passages;
            passages
                .ids()
                .iter()
                .zip(passages.scores(qv.values()))
                .map(|(&id, s)| (NodeId(id), s))
                .collect()
        } else {
            Vec::new()
        };
        let reset = match reset_from_seed_scores(phrase_scores, &passage_scores, config.passage_weight, config.max_phrase_seeds) {
            Ok(r) if r.phrase_seed_count() > 0 => r,
            Ok(_) => {
                diagnostics.fallback_reason = Some("no phrase seeds".into());
                return self.dense_from_vector(qv, config.top_k, diagnostics);
            }
            Err(Error::DegenerateReset) => {
                diagnostics.fallback_reason = Some("degenerate reset vector".into());
                return self.dense_from_vector(qv, config.top_k, diagnostics);
            }
            Err(e) => return Err(e),
        };
        diagnostics.seeds = reset.seeds().to_vec();

        let adjacency = if config.passage_nodes {
            self.index.kg.adjacency()
        } else {
            self.index.kg.phrase_adjacency()
        };
        let ppr = run_ppr(adjacency, &reset, &config.ppr)?;
        let ppr_ms = ms_since(t);
        diagnostics.ppr_iterations = ppr.iterations;
        diagnostics.ppr_converged = ppr.converged;
        diagnostics.ppr_residual = ppr.residual;

        let t = Instant::now();
        let kg = &self.index.kg;
        let scored: Vec<(u32, f64)> = self
            .index
            .passages
            .ids()
            .iter()
            .map(|&id| {
                let node = NodeId(id);
                let score = if config.passage_nodes {
                    ppr.scores[node.index()]
                } else {
                    kg.incident_edges(node)
                        .filter(|e| e.kind == EdgeKind::Context)
                        .map(|e| ppr.scores[e.other(node).index()])
                        .sum()
                };
                (id, score)
            })
            .collect();
        let passages = crate::embedding::top_k_of(scored, config.top_k)
            .into_iter()
            .map(|(id, s)| self.passage(NodeId(id), s))
            .collect();
        Ok(RankedPassages {
            passages,
            provenance: Provenance::Pipeline,
            diagnostics,
            timings: RetrievalTimings {
                ppr_ms,
                rank_ms: ms_since(t),
                ..Default::default()
            },
        })
    }

    /// Builds the reset vector the pipeline would use for `query` in triple
    /// mode, or `None` when the query falls back to dense ranking.
    pub fn reset_vector(&self, query: &str, config: &RetrievalConfig) -> Result<Option<ResetVector>> {
        let qv = self.embed_query(query)?;
        let candidates = link_query_to_triples(&self.index, &qv, config.triple_top_k)?;
        if candidates.is_empty() {
            return Ok(None);
        }
        let filter = self.filter_for(config.filter_mode)?;
        let filtered = filter_triples(&self.index.kg, query, &candidates, filter, config.filter_mode, config.failure_policy)?;
        let phrases = phrase_scores_from_triples(&self.index.kg, &filtered);
        let passages: Vec<(NodeId, f64)> = self
            .index
            .passages
            .ids()
            .iter()
            .zip(self.index.passages.scores(qv.values()))
            .map(|(&id, s)| (NodeId(id), s))
            .collect();
        match reset_from_seed_scores(&phrases, &passages, config.passage_weight, config.max_phrase_seeds) {
            Ok(r) if r.phrase_seed_count() > 0 => Ok(Some(r)),
            Ok(_) | Err(Error::DegenerateReset) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// One passage of reader context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub title: Option<String>,
    pub text: String,
}

/// `Title: {title}\n{text}` blocks separated by blank lines.
pub fn assemble_context(blocks: &[ContextBlock]) -> String {
    blocks
        .iter()
        .map(|b| match &b.title {
            Some(t) => format!("Title: {t}\n{}", b.text),
            None => b.text.clone(),
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub trait Reader: Send + Sync {
    fn answer(&self, query: &str, context: &[ContextBlock]) -> Result<String>;
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReaderMode {
    #[default]
    ExtractiveMock,
    Remote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReaderClientConfig {
    pub mode: ReaderMode,
    pub endpoint: Option<String>,
    pub prompt_template: Option<String>,
    pub timeout_ms: u64,
}

impl Default for ReaderClientConfig {
    fn default() -> Self {
        ReaderClientConfig {
            mode: ReaderMode::ExtractiveMock,
            endpoint: None,
            prompt_template: None,
            timeout_ms: 60_000,
        }
    }
}

impl ReaderClientConfig {
    pub fn build(&self) -> Result<Arc<dyn Reader>> {
        match self.mode {
            ReaderMode::ExtractiveMock => Ok(Arc::new(ExtractiveReader)),
            ReaderMode::Remote => {
                let endpoint = self
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| Error::Config("remote reader needs an endpoint".into()))?;
                Ok(Arc::new(RemoteReader {
                    client: JsonClient::new(endpoint, self.timeout_ms),
                    prompt_template: self.prompt_template.clone(),
                }))
            }
        }
    }
}

/// Answers with a span of the context sentence that best overlaps the query.
///
/// The sentence sharing the most distinct query content tokens wins (earlier
/// blocks win ties). Within it, the longest run of words absent from the
/// query, trimmed of stopwords at both ends, is the answer; if every word
/// occurs in the query the whole sentence is returned.
pub struct ExtractiveReader;

fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if !matches!(b, b'.' | b'!' | b'?' | b'\n') {
            continue;
        }
        let next_is_space = bytes.get(i + 1).map_or(true, |c| c.is_ascii_whitespace());
        if !next_is_space {
            continue;
        }
        // "I. P. Paul": a single-letter word before the period is an initial
        if b == b'.' {
            let word = text[start..i].rsplit(|c: char| c.is_whitespace()).next().unwrap_or("");
            if word.chars().count() == 1 && word.chars().all(|c| c.is_uppercase()) {
                continue;
            }
        }
        let s = text[start..=i].trim();
        if !s.is_empty() {
            out.push(s);
        }
        start = i + 1;
    }
    let rest = text[start..].trim();
    if !rest.is_empty() {
        out.push(rest);
    }
    out
}

fn trim_word(w: &str) -> &str {
    w.trim_matches(|c: char| !c.is_alphanumeric())
}

impl ExtractiveReader {
    pub fn extract(query: &str, context: &[ContextBlock]) -> Option<String> {
        let query_tokens: HashSet<String> = tokens(query).into_iter().collect();
        let content: HashSet<&String> = query_tokens.iter().filter(|t| !is_stopword(t)).collect();
        let mut best: Option<(&str, usize)> = None;
        for block in context {
            for sentence in split_sentences(&block.text) {
                let overlap = tokens(sentence)
                    .into_iter()
                    .collect::<HashSet<_>>()
                    .iter()
                    .filter(|t| content.contains(t))
                    .count();
                if best.map_or(true, |(_, o)| overlap > o) {
                    best = Some((sentence, overlap));
                }
            }
        }
        let (sentence, _) = best?;
        let words: Vec<&str> = sentence.split_whitespace().collect();
        let in_query = |w: &str| {
            let t = tokens(w);
            !t.is_empty() && t.iter().all(|x| query_tokens.contains(x))
        };
        let is_filler = |w: &str| tokens(w).iter().all(|x| is_stopword(x));
        let mut best_run: (usize, usize) = (0, 0);
        let mut i = 0;
        while i < words.len() {
            if in_query(words[i]) {
                i += 1;
                continue;
            }
            let mut j = i;
            while j < words.len() && !in_query(words[j]) {
                j += 1;
            }
            let (mut s, mut e) = (i, j);
            while s < e && is_filler(words[s]) {
                s += 1;
            }
            while e > s && is_filler(words[e - 1]) {
                e -= 1;
            }
            if e - s > best_run.1 - best_run.0 {
                best_run = (s, e);
            }
            i = j;
        }
        let span: Vec<&str> = if best_run.1 > best_run.0 {
            words[best_run.0..best_run.1].to_vec()
        } else {
            words
        };
        let n = span.len();
        let text = span
            .iter()
            .enumerate()
            .map(|(k, w)| if k == 0 || k + 1 == n { trim_word(w) } else { w })
            .filter(|w| !w.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        Some(text)
    }
}

impl Reader for ExtractiveReader {
    fn answer(&self, query: &str, context: &[ContextBlock]) -> Result<String> {
        ExtractiveReader::extract(query, context)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| Error::Precondition("reader context has no text".into()))
    }
}

#[derive(Serialize)]
struct ReaderRequest<'a> {
    query: &'a str,
    context: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_template: Option<&'a str>,
}

#[derive(Deserialize)]
struct ReaderResponse {
    answer: String,
}

/// Client for `{"query", "context"}` → `{"answer"}`.
pub struct RemoteReader {
    client: JsonClient,
    prompt_template: Option<String>,
}

impl Reader for RemoteReader {
    fn answer(&self, query: &str, context: &[ContextBlock]) -> Result<String> {
        let req = ReaderRequest {
            query,
            context: assemble_context(context),
            prompt_template: self.prompt_template.as_deref(),
        };
        let resp: ReaderResponse = self.client.post(&req).map_err(|e| Error::Provider {
            provider: "reader",
            batch: None,
            retryable: matches!(e, RemoteError::Transport(_)),
            message: e.to_string(),
        })?;
        if resp.answer.trim().is_empty() {
            return Err(Error::Provider {
                provider: "reader",
                batch: None,
                retryable: false,
                message: "empty answer".into(),
            });
        }
        Ok(resp.answer)
    }
}

/// Reader answer over the ranked passages, in rank order.
pub fn answer_question(index: &Index, query: &str, passages: &RankedPassages, reader: &dyn Reader) -> Result<String> {
    if passages.passages.is_empty() {
        return Err(Error::Precondition("answer_question needs at least one passage".into()));
    }
    let blocks: Vec<ContextBlock> = passages
        .passages
        .iter()
        .map(|p| {
            let node = index
                .kg
                .passage(p.node)
                .ok_or_else(|| Error::NotFound(format!("passage {}", p.doc_id)))?;
            Ok(ContextBlock {
                title: node.title.clone(),
                text: node.text.clone(),
            })
        })
        .collect::<Result<_>>()?;
    reader.answer(query, &blocks)
}
