//! Offline indexing: extraction, graph construction, embedding and synonym edges.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::{synonym_pairs, EmbeddingProvider, StoreKind, TextKind, VectorStore};
use crate::error::{Error, Result};
use crate::extract::{passage_embedding_text, CorpusRecord, Extraction, Extractor};
use crate::kg::{FrozenKg, GraphStats, KgConfig, NodeId, OpenKG};
use crate::ppr::DEFAULT_DAMPING;
use crate::reset::DEFAULT_PASSAGE_WEIGHT;

/// Settings fixed at index time and recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub embedding_dim: usize,
    pub synonym_threshold: f64,
    pub collapse_relation_edges: bool,
    pub damping: f64,
    pub passage_weight_factor: f64,
    pub embedder: String,
    pub extractor: String,
    pub passage_embedding_text: String,
    pub triple_embedding_text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexConfig {
    pub kg: KgConfig,
    /// Retrieval defaults recorded alongside the index.
    pub damping: f64,
    pub passage_weight_factor: f64,
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            kg: KgConfig::default(),
            damping: DEFAULT_DAMPING,
            passage_weight_factor: DEFAULT_PASSAGE_WEIGHT,
        }
    }
}

/// A frozen graph with one embedding per phrase, passage and triple.
#[derive(Clone, Debug)]
pub struct Index {
    pub kg: FrozenKg,
    pub phrases: VectorStore,
    pub passages: VectorStore,
    pub triples: VectorStore,
    pub meta: IndexMeta,
}

impl Index {
    pub fn stats(&self) -> GraphStats {
        self.kg.stats()
    }

    pub fn store(&self, kind: StoreKind) -> &VectorStore {
        match kind {
            StoreKind::Phrase => &self.phrases,
            StoreKind::Passage => &self.passages,
            StoreKind::Triple => &self.triples,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub extraction_ms: f64,
    pub graph_ms: f64,
    pub embedding_ms: f64,
    pub synonym_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub stats: GraphStats,
    pub wall_time_ms: f64,
    pub timings: StageTimings,
    pub passages: usize,
    pub extraction_failures: usize,
    /// Extracted triples rejected by the graph (empty argument or relation).
    pub invalid_triples: usize,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Accumulates corpus records and produces frozen indexes. Calling
/// [`IndexBuilder::add_records`] again after [`IndexBuilder::finish`] extends
/// the index incrementally: only new items are extracted and embedded.
pub struct IndexBuilder {
    kg: OpenKG,
    config: IndexConfig,
    embedder: Arc<dyn EmbeddingProvider>,
    extractor: Arc<dyn Extractor>,
    phrases: VectorStore,
    passages: VectorStore,
    triples: VectorStore,
    synonyms_checked: usize,
    report: IndexReport,
}

impl IndexBuilder {
    pub fn new(
        config: IndexConfig,
        embedder: Arc<dyn EmbeddingProvider>,
        extractor: Arc<dyn Extractor>,
    ) -> Result<Self> {
        let dim = embedder.dim();
        if dim == 0 {
            return Err(Error::Config("embedding provider reports dimension 0".into()));
        }
        let t = config.kg.synonym_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!("synonym threshold {t} outside (0, 1]")));
        }
        Ok(IndexBuilder {
            kg: OpenKG::new(config.kg),
            config,
            embedder,
            extractor,
            phrases: VectorStore::new(StoreKind::Phrase, dim),
            passages: VectorStore::new(StoreKind::Passage, dim),
            triples: VectorStore::new(StoreKind::Triple, dim),
            synonyms_checked: 0,
            report: IndexReport::default(),
        })
    }

    pub fn kg(&self) -> &OpenKG {
        &self.kg
    }

    /// Extracts and inserts `records` in order. Extraction failures are
    /// logged and counted; the passage is kept with zero triples.
    pub fn add_records(&mut self, records: &[CorpusRecord]) -> Result<()> {
        let started = Instant::now();
        let mut seen = HashSet::new();
        for r in records {
            if r.text.trim().is_empty() {
                return Err(Error::Precondition(format!("passage {:?} has empty text", r.doc_id)));
            }
            if !seen.insert(r.doc_id.as_str()) || self.kg.find_passage(&r.doc_id).is_some() {
                return Err(Error::Conflict(format!("duplicate doc_id {:?}", r.doc_id)));
            }
        }

        let t = Instant::now();
        let extractions: Vec<Option<Extraction>> = records
            .iter()
            .map(|r| match self.extractor.extract(r) {
                Ok(x) => Some(x),
                Err(e) => {
                    tracing::warn!(doc_id = %r.doc_id, error = %e, "extraction failed; passage indexed without triples");
                    None
                }
            })
            .collect();
        self.report.timings.extraction_ms += ms_since(t);

        let t = Instant::now();
        for (record, extraction) in records.iter().zip(extractions) {
            let passage = self.kg.add_passage(&record.doc_id, record.title.as_deref(), &record.text)?;
            self.report.passages += 1;
            let Some(extraction) = extraction else {
                self.report.extraction_failures += 1;
                continue;
            };
            for triple in &extraction.triples {
                match self.kg.add_triple(&triple.subject, &triple.relation, &triple.object, passage) {
                    Ok(_) => {}
                    Err(Error::Validation(reason)) => {
                        tracing::debug!(doc_id = %record.doc_id, %reason, "dropping invalid triple");
                        self.report.invalid_triples += 1;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        self.report.timings.graph_ms += ms_since(t);
        self.report.wall_time_ms += ms_since(started);
        Ok(())
    }

    fn embed_missing(&mut self) -> Result<()> {
        let mut phrase_ids = Vec::new();
        let mut phrase_texts = Vec::new();
        let mut passage_ids = Vec::new();
        let mut passage_texts = Vec::new();
        let embedded_phrases = self.phrases.len();
        let embedded_passages = self.passages.len();
        let (mut np, mut nq) = (0, 0);
        for node in self.kg.nodes() {
            match node {
                crate::kg::Node::Phrase(p) => {
                    if np >= embedded_phrases {
                        phrase_ids.push(p.id.0);
                        phrase_texts.push(p.text.clone());
                    }
                    np += 1;
                }
                crate::kg::Node::Passage(p) => {
                    if nq >= embedded_passages {
                        passage_ids.push(p.id.0);
                        passage_texts.push(passage_embedding_text(p.title.as_deref(), &p.text));
                    }
                    nq += 1;
                }
            }
        }
        let new_triples = &self.kg.triples()[self.triples.len()..];
        let triple_ids: Vec<u32> = new_triples.iter().map(|t| t.id.0).collect();
        let triple_texts: Vec<String> = new_triples.iter().map(|t| self.kg.triple_text(t)).collect();

        // embed everything first so a provider failure leaves the stores untouched
        let embed = |texts: &[String], kind| -> Result<Vec<_>> {
            if texts.is_empty() {
                Ok(Vec::new())
            } else {
                self.embedder.embed(texts, kind)
            }
        };
        let pv = embed(&phrase_texts, TextKind::Phrase)?;
        let qv = embed(&passage_texts, TextKind::Passage)?;
        let tv = embed(&triple_texts, TextKind::Triple)?;
        for (vs, n) in [(&pv, phrase_texts.len()), (&qv, passage_texts.len()), (&tv, triple_texts.len())] {
            if vs.len() != n {
                return Err(Error::Config(format!("provider returned {} embeddings for {n} texts", vs.len())));
            }
            if let Some(v) = vs.iter().find(|v| v.dim() != self.embedder.dim()) {
                return Err(Error::Config(format!(
                    "embedding dimension mismatch: got {}, expected {}",
                    v.dim(),
                    self.embedder.dim()
                )));
            }
        }
        for (id, v) in phrase_ids.into_iter().zip(&pv) {
            self.phrases.push(id, v)?;
        }
        for (id, v) in passage_ids.into_iter().zip(&qv) {
            self.passages.push(id, v)?;
        }
        for (id, v) in triple_ids.into_iter().zip(&tv) {
            self.triples.push(id, v)?;
        }
        Ok(())
    }

    /// Embeds new items, adds synonym edges for new phrases and returns a frozen snapshot.
    pub fn finish(&mut self) -> Result<(Index, IndexReport)> {
        if self.kg.stats().passage_nodes == 0 {
            return Err(Error::Precondition("cannot build an index from an empty corpus".into()));
        }
        let started = Instant::now();
        let t = Instant::now();
        self.embed_missing()?;
        self.report.timings.embedding_ms += ms_since(t);

        let t = Instant::now();
        let threshold = self.config.kg.synonym_threshold;
        for (a, b, sim) in synonym_pairs(&self.phrases, threshold, self.synonyms_checked) {
            self.kg.add_synonym_edge(NodeId(a), NodeId(b), sim)?;
        }
        self.synonyms_checked = self.phrases.len();
        self.report.timings.synonym_ms += ms_since(t);
        self.report.wall_time_ms += ms_since(started);
        self.report.stats = self.kg.stats();

        let meta = IndexMeta {
            embedding_dim: self.embedder.dim(),
            synonym_threshold: threshold,
            collapse_relation_edges: self.config.kg.collapse_relation_edges,
            damping: self.config.damping,
            passage_weight_factor: self.config.passage_weight_factor,
            embedder: self.embedder.fingerprint(),
            extractor: self.extractor.fingerprint(),
            passage_embedding_text: "title\\ntext".into(),
            triple_embedding_text: "subject | relation | object".into(),
        };
        let index = Index {
            kg: self.kg.clone().freeze(),
            phrases: self.phrases.clone(),
            passages: self.passages.clone(),
            triples: self.triples.clone(),
            meta,
        };
        Ok((index, self.report.clone()))
    }
}

pub fn build_index(
    corpus: &[CorpusRecord],
    config: &IndexConfig,
    embedder: Arc<dyn EmbeddingProvider>,
    extractor: Arc<dyn Extractor>,
) -> Result<(Index, IndexReport)> {
    if corpus.is_empty() {
        return Err(Error::Precondition("cannot build an index from an empty corpus".into()));
    }
    let mut builder = IndexBuilder::new(config.clone(), embedder, extractor)?;
    builder.add_records(corpus)?;
    builder.finish()
}
