//! Graph-memory passage retrieval.
//!
//! Passages are indexed into an open knowledge graph of phrase and passage
//! nodes. Queries are linked to extracted triples, filtered, and used to seed
//! a personalized PageRank walk whose mass on passage nodes gives the ranking.

pub mod config;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod extract;
pub mod indexer;
pub mod kg;
pub mod linker;
pub mod persist;
pub mod ppr;
mod remote;
pub mod reset;
pub mod retriever;
pub mod synthetic;
pub mod text;

pub use config::GraphMemConfig;
pub use embedding::{EmbeddingProvider, EmbeddingVector, MockEmbedder, VectorStore};
pub use error::{Error, Result};
pub use eval::{EvalQuery, EvalReport};
pub use extract::{CorpusRecord, Extractor, MockExtractor};
pub use indexer::{build_index, Index, IndexBuilder, IndexConfig, IndexReport};
pub use kg::{EdgeKind, GraphStats, NodeId, OpenKG, TripleId};
pub use linker::{FilterMode, LinkMode, ScoredTriple};
pub use persist::{load_index, save_index, Manifest};
pub use ppr::{dense_ppr_oracle, run_ppr, PprParams, PprScores};
pub use reset::ResetVector;
pub use retriever::{Provenance, RankedPassages, RetrievalConfig, Retriever};
