//! Online query linking and triple filtering.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{top_k_similar, EmbeddingProvider, EmbeddingVector, TextKind};
use crate::error::{Error, Result};
use crate::extract::Extractor;
use crate::indexer::Index;
use crate::kg::{NodeId, OpenKG, TripleId};
use crate::remote::{JsonClient, RemoteError};
use crate::text::content_tokens;

pub const DEFAULT_TRIPLE_TOP_K: usize = 5;

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriple {
    pub triple: TripleId,
    pub score: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    /// Whole query against triple embeddings, then filtering.
    Triple,
    /// Whole query against phrase embeddings.
    Node,
    /// Query entities against phrase embeddings.
    Ner,
}

impl std::str::FromStr for LinkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "triple" => Ok(LinkMode::Triple),
            "node" => Ok(LinkMode::Node),
            "ner" => Ok(LinkMode::Ner),
            other => Err(Error::Usage(format!("unknown link mode {other:?} (expected triple|node|ner)"))),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    MockKeepAll,
    MockKeepNone,
    MockLexical,
    Remote,
    /// Recorded when a filter set is built by hand.
    KeepAll,
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mock_keep_all" | "off" => Ok(FilterMode::MockKeepAll),
            "mock_keep_none" => Ok(FilterMode::MockKeepNone),
            "mock_lexical" => Ok(FilterMode::MockLexical),
            "remote" => Ok(FilterMode::Remote),
            other => Err(Error::Usage(format!("unknown filter mode {other:?}"))),
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Keep every candidate when the filter errors.
    #[default]
    FailOpen,
    /// Keep nothing, which sends the query to dense fallback.
    FailClosed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilteredTripleSet {
    /// Subset of the candidates, in candidate order.
    pub kept: Vec<ScoredTriple>,
    pub dropped: Vec<TripleId>,
    /// Filter answers that did not name a candidate.
    pub hallucinated: usize,
    pub mode: FilterMode,
    /// The filter errored and the failure policy decided the outcome.
    pub failed: bool,
}

/// Recognition-memory filter. Returns indices into `triples` to keep; any
/// index outside the candidate list is treated as a hallucination.
pub trait TripleFilter: Send + Sync {
    fn select(&self, query: &str, triples: &[[String; 3]]) -> Result<Vec<i64>>;
}

pub struct KeepAll;

impl TripleFilter for KeepAll {
    fn select(&self, _query: &str, triples: &[[String; 3]]) -> Result<Vec<i64>> {
        Ok((0..triples.len() as i64).collect())
    }
}

pub struct KeepNone;

impl TripleFilter for KeepNone {
    fn select(&self, _query: &str, _triples: &[[String; 3]]) -> Result<Vec<i64>> {
        Ok(Vec::new())
    }
}

/// Keeps triples sharing at least one content token with the query.
pub struct LexicalFilter;

impl TripleFilter for LexicalFilter {
    fn select(&self, query: &str, triples: &[[String; 3]]) -> Result<Vec<i64>> {
        let q: HashSet<String> = content_tokens(query).into_iter().collect();
        Ok(triples
            .iter()
            .enumerate()
            .filter(|(_, t)| t.iter().flat_map(|part| content_tokens(part)).any(|tok| q.contains(&tok)))
            .map(|(i, _)| i as i64)
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterClientConfig {
    pub endpoint: Option<String>,
    pub prompt_template: Option<String>,
    pub temperature: f64,
    pub timeout_ms: u64,
}

impl Default for FilterClientConfig {
    fn default() -> Self {
        FilterClientConfig {
            endpoint: None,
            prompt_template: None,
            temperature: 0.0,
            timeout_ms: 60_000,
        }
    }
}

impl FilterClientConfig {
    pub fn build(&self) -> Result<Option<Arc<dyn TripleFilter>>> {
        Ok(self
            .endpoint
            .as_deref()
            .map(|e| Arc::new(RemoteFilter::new(e, self)) as Arc<dyn TripleFilter>))
    }
}

#[derive(Serialize)]
struct FilterRequest<'a> {
    query: &'a str,
    triples: &'a [[String; 3]],
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_template: Option<&'a str>,
    temperature: f64,
}

#[derive(Deserialize)]
struct FilterResponse {
    keep_indices: Vec<i64>,
}

/// Client for `{"query", "triples": [[s, r, o], ...]}` → `{"keep_indices": [...]}`.
pub struct RemoteFilter {
    client: JsonClient,
    prompt_template: Option<String>,
    temperature: f64,
}

impl RemoteFilter {
    pub fn new(endpoint: &str, cfg: &FilterClientConfig) -> Self {
        RemoteFilter {
            client: JsonClient::new(endpoint, cfg.timeout_ms),
            prompt_template: cfg.prompt_template.clone(),
            temperature: cfg.temperature,
        }
    }
}

impl TripleFilter for RemoteFilter {
    fn select(&self, query: &str, triples: &[[String; 3]]) -> Result<Vec<i64>> {
        let req = FilterRequest {
            query,
            triples,
            prompt_template: self.prompt_template.as_deref(),
            temperature: self.temperature,
        };
        let resp: FilterResponse = self.client.post(&req).map_err(|e| Error::Provider {
            provider: "filter",
            batch: None,
            retryable: matches!(e, RemoteError::Transport(_)),
            message: e.to_string(),
        })?;
        Ok(resp.keep_indices)
    }
}

/// Triple arguments as the filter sees them (normalized phrase text).
pub fn triple_parts(kg: &OpenKG, id: TripleId) -> Option<[String; 3]> {
    let t = kg.triple(id)?;
    Some([
        kg.phrase(t.subject)?.text.clone(),
        t.relation.clone(),
        kg.phrase(t.object)?.text.clone(),
    ])
}

/// Applies `filter` and enforces the subset law: kept ⊆ candidates, in
/// candidate order, scores unchanged.
pub fn filter_triples(
    kg: &OpenKG,
    query: &str,
    candidates: &[ScoredTriple],
    filter: &dyn TripleFilter,
    mode: FilterMode,
    policy: FailurePolicy,
) -> Result<FilteredTripleSet> {
    if candidates.is_empty() {
        return Err(Error::Precondition("filter_triples needs at least one candidate".into()));
    }
    let parts: Vec<[String; 3]> = candidates
        .iter()
        .map(|c| triple_parts(kg, c.triple).ok_or_else(|| Error::NotFound(format!("triple {:?}", c.triple))))
        .collect::<Result<_>>()?;
    let (selected, failed) = match filter.select(query, &parts) {
        Ok(indices) => (indices, false),
        Err(e) => {
            tracing::warn!(error = %e, ?policy, "triple filter failed");
            let fallback = match policy {
                FailurePolicy::FailOpen => (0..candidates.len() as i64).collect(),
                FailurePolicy::FailClosed => Vec::new(),
            };
            (fallback, true)
        }
    };
    let mut keep = vec![false; candidates.len()];
    let mut hallucinated = 0;
    for i in selected {
        match usize::try_from(i).ok().filter(|&i| i < candidates.len()) {
            Some(i) => keep[i] = true,
            None => hallucinated += 1,
        }
    }
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (c, k) in candidates.iter().zip(keep) {
        if k {
            kept.push(*c);
        } else {
            dropped.push(c.triple);
        }
    }
    Ok(FilteredTripleSet {
        kept,
        dropped,
        hallucinated,
        mode,
        failed,
    })
}

/// Top-k triples by query–triple similarity.
pub fn link_query_to_triples(index: &Index, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredTriple>> {
    Ok(top_k_similar(query, &index.triples, k)?
        .into_iter()
        .map(|(id, score)| ScoredTriple {
            triple: TripleId(id),
            score,
        })
        .collect())
}

/// Top-k phrase nodes by whole-query similarity.
pub fn link_query_to_nodes(index: &Index, query: &EmbeddingVector, k: usize) -> Result<Vec<(NodeId, f64)>> {
    Ok(top_k_similar(query, &index.phrases, k)?
        .into_iter()
        .map(|(id, s)| (NodeId(id), s))
        .collect())
}

/// Nearest phrase node for each query entity; a node reached by several
/// entities keeps its best score. Ordered by descending score.
pub fn link_ner_to_nodes(
    index: &Index,
    embedder: &dyn EmbeddingProvider,
    extractor: &dyn Extractor,
    query: &str,
) -> Result<Vec<(NodeId, f64)>> {
    let entities = extractor.query_entities(query)?;
    if entities.is_empty() || index.phrases.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = embedder.embed(&entities, TextKind::Phrase)?;
    let mut best: BTreeMap<NodeId, f64> = BTreeMap::new();
    for v in &vectors {
        if let Some(&(id, s)) = top_k_similar(v, &index.phrases, 1)?.first() {
            let e = best.entry(NodeId(id)).or_insert(f64::NEG_INFINITY);
            *e = e.max(s);
        }
    }
    let mut out: Vec<(NodeId, f64)> = best.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::MockEmbedder;
    use crate::extract::{CorpusRecord, MockExtractor};
    use crate::indexer::{build_index, IndexConfig};
    use crate::remote::test_server;
    use proptest::prelude::*;

    fn fixture() -> Index {
        let corpus = vec![
            CorpusRecord::new("1", Some("I. P. Paul"), "I. P. Paul was a mayor from Thrissur.")
                .with_triples(&[("I. P. Paul", "from", "Thrissur"), ("I. P. Paul", "was mayor of", "Thrissur municipal corporation")]),
            CorpusRecord::new("2", Some("Thrissur"), "Thrissur is a city in Kerala.")
                .with_triples(&[("Thrissur", "is a city in", "Kerala")]),
            CorpusRecord::new("3", Some("Yinka Ayefele"), "Yinka Ayefele is a musician from Ipetu-Ijesha.")
                .with_triples(&[("Yinka Ayefele", "is a", "musician"), ("Yinka Ayefele", "from", "Ipetu-Ijesha")]),
        ];
        build_index(&corpus, &IndexConfig::default(), Arc::new(MockEmbedder::default()), Arc::new(MockExtractor))
            .unwrap()
            .0
    }

    fn cands(index: &Index, q: &str, k: usize) -> Vec<ScoredTriple> {
        let v = MockEmbedder::default().embed_text(q);
        link_query_to_triples(index, &v, k).unwrap()
    }

    #[test]
    fn query_to_triple_finds_birthplace_fact() {
        let index = fixture();
        let got = cands(&index, "In what city was I.P. Paul born?", 5);
        let texts: Vec<String> = got.iter().map(|c| index.kg.triple_text(index.kg.triple(c.triple).unwrap())).collect();
        assert!(texts.iter().any(|t| t == "i. p. paul | from | thrissur"), "{texts:?}");
        for w in got.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn ranking_equals_oracle_sort() {
        let index = fixture();
        let q = MockEmbedder::default().embed_text("Thrissur Kerala city");
        let got = link_query_to_triples(&index, &q, 100).unwrap();
        let mut oracle: Vec<(u32, f64)> = index
            .kg
            .triples()
            .iter()
            .map(|t| {
                let v = MockEmbedder::default().embed_text(&index.kg.triple_text(t));
                (t.id.0, v.dot(&q))
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        assert_eq!(got.iter().map(|c| c.triple.0).collect::<Vec<_>>(), oracle.iter().map(|x| x.0).collect::<Vec<_>>());
    }

    #[test]
    fn single_triple_store() {
        let corpus = vec![CorpusRecord::new("1", None, "x").with_triples(&[("a", "r", "b")])];
        let (index, _) =
            build_index(&corpus, &IndexConfig::default(), Arc::new(MockEmbedder::default()), Arc::new(MockExtractor)).unwrap();
        let got = cands(&index, "anything", 1);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].triple, TripleId(0));
    }

    #[test]
    fn node_and_ner_linking() {
        let index = fixture();
        let m = MockEmbedder::default();
        let q = m.embed_text("Kerala");
        let nodes = link_query_to_nodes(&index, &q, 1).unwrap();
        assert_eq!(nodes[0].0, index.kg.find_phrase("kerala").unwrap());
        assert!((nodes[0].1 - 1.0).abs() < 1e-6);

        let ner = link_ner_to_nodes(&index, &m, &MockExtractor, "Where does Yinka Ayefele live near Thrissur?").unwrap();
        let ids: HashSet<NodeId> = ner.iter().map(|x| x.0).collect();
        assert_eq!(ner.len(), 2);
        assert!(ids.contains(&index.kg.find_phrase("yinka ayefele").unwrap()));
        assert!(ids.contains(&index.kg.find_phrase("thrissur").unwrap()));

        assert!(link_ner_to_nodes(&index, &m, &MockExtractor, "where is it").unwrap().is_empty());
    }

    #[test]
    fn ner_matches_pairwise_oracle() {
        let index = fixture();
        let m = MockEmbedder::default();
        let ner = link_ner_to_nodes(&index, &m, &MockExtractor, "Did Paul meet Ayefele?").unwrap();
        for entity in ["Paul", "Ayefele"] {
            let v = m.embed_text(entity);
            let best = index
                .kg
                .phrases()
                .map(|p| (p.id, m.embed_text(&p.text).dot(&v)))
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)))
                .unwrap();
            assert!(ner.iter().any(|&(id, _)| id == best.0), "{entity}");
        }
    }

    #[test]
    fn keep_all_and_lexical_modes() {
        let index = fixture();
        let c = cands(&index, "In what city was I.P. Paul born?", 5);
        let all = filter_triples(&index.kg, "q", &c, &KeepAll, FilterMode::MockKeepAll, FailurePolicy::FailOpen).unwrap();
        assert_eq!(all.kept, c);
        let lex = filter_triples(&index.kg, "In what city was I.P. Paul born?", &c, &LexicalFilter, FilterMode::MockLexical, FailurePolicy::FailOpen).unwrap();
        assert!(!lex.kept.is_empty());
        assert!(lex.kept.len() < c.len());
        assert_eq!(lex.kept.len() + lex.dropped.len(), c.len());
        let none = filter_triples(&index.kg, "q", &c, &KeepNone, FilterMode::MockKeepNone, FailurePolicy::FailOpen).unwrap();
        assert!(none.kept.is_empty());
        assert!(filter_triples(&index.kg, "q", &[], &KeepAll, FilterMode::MockKeepAll, FailurePolicy::FailOpen).is_err());
    }

    struct Fabricating;

    impl TripleFilter for Fabricating {
        fn select(&self, _: &str, t: &[[String; 3]]) -> Result<Vec<i64>> {
            Ok(vec![1, t.len() as i64, 0])
        }
    }

    struct Broken;

    impl TripleFilter for Broken {
        fn select(&self, _: &str, _: &[[String; 3]]) -> Result<Vec<i64>> {
            Err(Error::Provider { provider: "filter", batch: None, retryable: true, message: "down".into() })
        }
    }

    #[test]
    fn fabricated_answers_are_dropped_and_counted() {
        let index = fixture();
        let c = cands(&index, "Thrissur", 4);
        let out = filter_triples(&index.kg, "q", &c, &Fabricating, FilterMode::Remote, FailurePolicy::FailOpen).unwrap();
        assert_eq!(out.hallucinated, 1);
        // candidate order, not answer order
        assert_eq!(out.kept, vec![c[0], c[1]]);
    }

    #[test]
    fn failure_policies() {
        let index = fixture();
        let c = cands(&index, "Thrissur", 3);
        let open = filter_triples(&index.kg, "q", &c, &Broken, FilterMode::Remote, FailurePolicy::FailOpen).unwrap();
        assert!(open.failed);
        assert_eq!(open.kept, c);
        let closed = filter_triples(&index.kg, "q", &c, &Broken, FilterMode::Remote, FailurePolicy::FailClosed).unwrap();
        assert!(closed.kept.is_empty());
    }

    #[test]
    fn remote_filter_wire_contract() {
        let stub = test_server::serve(|body| {
            let v: serde_json::Value = serde_json::from_str(body).unwrap();
            assert_eq!(v["triples"][0].as_array().unwrap().len(), 3);
            (200, r#"{"keep_indices":[0, 7, -1]}"#.into())
        });
        let cfg = FilterClientConfig { endpoint: Some(stub.url.clone()), ..Default::default() };
        let remote = cfg.build().unwrap().unwrap();
        let index = fixture();
        let c = cands(&index, "Thrissur", 3);
        let out = filter_triples(&index.kg, "Thrissur?", &c, remote.as_ref(), FilterMode::Remote, FailurePolicy::FailOpen).unwrap();
        assert_eq!(out.kept, vec![c[0]]);
        assert_eq!(out.hallucinated, 2);
        let sent: serde_json::Value = serde_json::from_str(&stub.requests.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["query"], "Thrissur?");
    }

    struct Arbitrary(Vec<i64>);

    impl TripleFilter for Arbitrary {
        fn select(&self, _: &str, _: &[[String; 3]]) -> Result<Vec<i64>> {
            Ok(self.0.clone())
        }
    }

    proptest! {
        #[test]
        fn subset_law_and_order_stability(answer in proptest::collection::vec(-5i64..12, 0..20), k in 1usize..6) {
            let index = fixture();
            let c = cands(&index, "Paul Thrissur Kerala", k);
            let out = filter_triples(&index.kg, "q", &c, &Arbitrary(answer), FilterMode::Remote, FailurePolicy::FailOpen).unwrap();
            let mut pos = 0;
            for kept in &out.kept {
                let at = c[pos..].iter().position(|x| x == kept);
                prop_assert!(at.is_some(), "kept triple not in candidates in order");
                pos += at.unwrap() + 1;
            }
            prop_assert_eq!(out.kept.len() + out.dropped.len(), c.len());
        }
    }
}
