//! Shared setup for the graphmem benchmarks.

use std::sync::Arc;

use graphmem_core::synthetic::random_corpus;
use graphmem_core::{build_index, CorpusRecord, Index, IndexConfig, MockEmbedder, MockExtractor, RetrievalConfig, Retriever};

/// Random corpus whose graph has roughly `passages * 20` edges.
pub fn corpus(passages: usize) -> Vec<CorpusRecord> {
    random_corpus(passages, 7, (passages * 3 / 5).max(10), false, 5)
}

pub fn index(corpus: &[CorpusRecord]) -> Index {
    build_index(corpus, &IndexConfig::default(), Arc::new(MockEmbedder::default()), Arc::new(MockExtractor))
        .expect("mock providers never fail")
        .0
}

pub fn retriever(index: Index) -> Retriever {
    Retriever::new(Arc::new(index), Arc::new(MockEmbedder::default()), Arc::new(MockExtractor)).expect("dims match")
}

/// First sentence of every `step`-th passage, which always links to a triple.
pub fn queries(corpus: &[CorpusRecord], step: usize) -> Vec<String> {
    corpus
        .iter()
        .step_by(step.max(1))
        .map(|c| c.text.split('.').next().unwrap_or(&c.text).to_string())
        .collect()
}

pub fn default_config() -> RetrievalConfig {
    RetrievalConfig::default()
}
