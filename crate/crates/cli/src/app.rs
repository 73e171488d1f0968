//! Index loading and the retrieve call shared by the command line and the HTTP service.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use graphmem_core::linker::LinkMode;
use graphmem_core::ppr::DEFAULT_DAMPING;
use graphmem_core::reset::DEFAULT_PASSAGE_WEIGHT;
use graphmem_core::{load_index, GraphMemConfig, Manifest, Provenance, RankedPassages, RetrievalConfig, Retriever};
use serde::{Deserialize, Serialize};

/// A loaded index ready to answer queries.
pub struct Loaded {
    pub retriever: Retriever,
    pub manifest: Manifest,
    /// Retrieval settings after merging the config file with the index manifest.
    pub defaults: RetrievalConfig,
}

pub fn load(dir: &Path, config: &GraphMemConfig) -> graphmem_core::Result<Loaded> {
    let (index, manifest) = load_index(dir)?;
    let embedder = config.embedding.build()?;
    let extractor = config.extraction.build()?;
    let mut retriever = Retriever::new(Arc::new(index), embedder, extractor)?;
    if let Some(filter) = config.filter.build()? {
        retriever = retriever.with_filter(filter);
    }
    let defaults = merged_defaults(config, &manifest);
    defaults.validate()?;
    Ok(Loaded {
        retriever,
        manifest,
        defaults,
    })
}

/// Damping and passage weight come from the manifest unless the config file
/// sets a non-default value.
pub fn merged_defaults(config: &GraphMemConfig, manifest: &Manifest) -> RetrievalConfig {
    let mut c = config.retrieval.clone();
    if c.ppr.damping == DEFAULT_DAMPING {
        c.ppr.damping = manifest.damping;
    }
    if c.passage_weight == DEFAULT_PASSAGE_WEIGHT {
        c.passage_weight = manifest.passage_weight_factor;
    }
    c
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveRequest {
    pub query: String,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub link_mode: Option<LinkMode>,
}

impl RetrieveRequest {
    pub fn apply(&self, defaults: &RetrievalConfig) -> RetrievalConfig {
        let mut c = defaults.clone();
        if let Some(k) = self.top_k {
            c.top_k = k;
        }
        if let Some(m) = self.link_mode {
            c.link_mode = m;
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassageOut {
    pub doc_id: String,
    pub title: Option<String>,
    pub score: f64,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsOut {
    pub candidate_triples: usize,
    pub kept_triples: usize,
    pub dropped_triples: usize,
    pub hallucinated_indices: usize,
    pub filter_failed: bool,
    pub phrase_seeds: usize,
    pub passage_seeds: usize,
    pub ppr_iterations: usize,
    pub ppr_converged: bool,
    pub ppr_residual: f64,
    pub fallback_reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingOut {
    pub total: f64,
    pub embed: f64,
    pub link: f64,
    pub filter: f64,
    pub ppr: f64,
    pub rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrieveResponse {
    pub passages: Vec<PassageOut>,
    pub provenance: Provenance,
    pub diagnostics: DiagnosticsOut,
    pub timing_ms: TimingOut,
}

impl RetrieveResponse {
    pub fn from_ranked(ranked: &RankedPassages, total_ms: f64) -> Self {
        let d = &ranked.diagnostics;
        let phrase_seeds = d
            .seeds
            .iter()
            .filter(|s| s.kind == graphmem_core::reset::SeedKind::Phrase)
            .count();
        let t = &ranked.timings;
        RetrieveResponse {
            passages: ranked
                .passages
                .iter()
                .enumerate()
                .map(|(i, p)| PassageOut {
                    doc_id: p.doc_id.clone(),
                    title: p.title.clone(),
                    score: p.score,
                    rank: i + 1,
                })
                .collect(),
            provenance: ranked.provenance,
            diagnostics: DiagnosticsOut {
                candidate_triples: d.candidates.len(),
                kept_triples: d.kept.len(),
                dropped_triples: d.dropped.len(),
                hallucinated_indices: d.hallucinated,
                filter_failed: d.filter_failed,
                phrase_seeds,
                passage_seeds: d.seeds.len() - phrase_seeds,
                ppr_iterations: d.ppr_iterations,
                ppr_converged: d.ppr_converged,
                ppr_residual: d.ppr_residual,
                fallback_reason: d.fallback_reason.clone(),
            },
            timing_ms: TimingOut {
                total: total_ms,
                embed: t.embed_ms,
                link: t.link_ms,
                filter: t.filter_ms,
                ppr: t.ppr_ms,
                rank: t.rank_ms,
            },
        }
    }
}

/// The single retrieve path behind `graphmem retrieve` and `POST /retrieve`.
pub fn retrieve(retriever: &Retriever, query: &str, config: &RetrievalConfig) -> graphmem_core::Result<RetrieveResponse> {
    config.validate()?;
    let start = Instant::now();
    let ranked = retriever.retrieve(query, config)?;
    Ok(RetrieveResponse::from_ranked(&ranked, start.elapsed().as_secs_f64() * 1e3))
}
