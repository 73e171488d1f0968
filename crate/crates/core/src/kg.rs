//! The open knowledge graph: phrase nodes, passage nodes, typed undirected
//! edges and triples with provenance.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Deref;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::normalize_phrase;

pub const DEFAULT_SYNONYM_THRESHOLD: f64 = 0.8;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TripleId(pub u32);

impl TripleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhraseNode {
    pub id: NodeId,
    /// Normalized surface form; also the dedup key.
    pub text: String,
    pub raw_forms: BTreeSet<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PassageNode {
    pub id: NodeId,
    pub doc_id: String,
    pub title: Option<String>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Phrase(PhraseNode),
    Passage(PassageNode),
}

impl Node {
    pub fn id(&self) -> NodeId {
        match self {
            Node::Phrase(p) => p.id,
            Node::Passage(p) => p.id,
        }
    }

    pub fn is_phrase(&self) -> bool {
        matches!(self, Node::Phrase(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triple {
    pub id: TripleId,
    pub subject: NodeId,
    pub relation: String,
    pub object: NodeId,
    pub source_passage: NodeId,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Relation,
    Synonym,
    Context,
}

impl EdgeKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            EdgeKind::Relation => 0,
            EdgeKind::Synonym => 1,
            EdgeKind::Context => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(EdgeKind::Relation),
            1 => Some(EdgeKind::Synonym),
            2 => Some(EdgeKind::Context),
            _ => None,
        }
    }
}

/// Undirected edge; endpoints are stored with `a < b`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub kind: EdgeKind,
    pub weight: f64,
}

impl Edge {
    pub fn other(&self, node: NodeId) -> NodeId {
        if self.a == node {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub phrase_nodes: usize,
    pub passage_nodes: usize,
    pub total_nodes: usize,
    pub relation_edges: usize,
    pub synonym_edges: usize,
    pub context_edges: usize,
    pub total_edges: usize,
    pub triples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgConfig {
    pub synonym_threshold: f64,
    /// Repeated relation edges between one phrase pair collapse to weight 1.0.
    /// When false each distinct triple adds 1.0 to the edge weight.
    pub collapse_relation_edges: bool,
}

impl Default for KgConfig {
    fn default() -> Self {
        KgConfig {
            synonym_threshold: DEFAULT_SYNONYM_THRESHOLD,
            collapse_relation_edges: true,
        }
    }
}

type TripleKey = (NodeId, String, NodeId, NodeId);

#[derive(Clone, Debug)]
pub struct OpenKG {
    config: KgConfig,
    nodes: Vec<Node>,
    phrase_index: HashMap<String, NodeId>,
    doc_index: HashMap<String, NodeId>,
    triples: Vec<Triple>,
    triple_index: HashMap<TripleKey, TripleId>,
    edges: Vec<Edge>,
    edge_index: HashMap<(NodeId, NodeId, EdgeKind), usize>,
    incident: Vec<Vec<usize>>,
}

impl Default for OpenKG {
    fn default() -> Self {
        OpenKG::new(KgConfig::default())
    }
}

impl OpenKG {
    pub fn new(config: KgConfig) -> Self {
        OpenKG {
            config,
            nodes: Vec::new(),
            phrase_index: HashMap::new(),
            doc_index: HashMap::new(),
            triples: Vec::new(),
            triple_index: HashMap::new(),
            edges: Vec::new(),
            edge_index: HashMap::new(),
            incident: Vec::new(),
        }
    }

    pub fn config(&self) -> &KgConfig {
        &self.config
    }

    fn push_node(&mut self, node: Node) -> NodeId {
        let id = node.id();
        self.nodes.push(node);
        self.incident.push(Vec::new());
        id
    }

    fn next_node_id(&self) -> Result<NodeId> {
        u32::try_from(self.nodes.len())
            .map(NodeId)
            .map_err(|_| Error::Validation("node id space exhausted".into()))
    }

    pub fn upsert_phrase(&mut self, text: &str) -> Result<NodeId> {
        let key = normalize_phrase(text);
        if key.is_empty() {
            return Err(Error::Validation(format!("phrase {text:?} is empty after normalization")));
        }
        if let Some(&id) = self.phrase_index.get(&key) {
            if let Node::Phrase(p) = &mut self.nodes[id.index()] {
                if !p.raw_forms.contains(text) {
                    p.raw_forms.insert(text.to_string());
                }
            }
            return Ok(id);
        }
        let id = self.next_node_id()?;
        self.phrase_index.insert(key.clone(), id);
        let raw_forms = BTreeSet::from([text.to_string()]);
        Ok(self.push_node(Node::Phrase(PhraseNode { id, text: key, raw_forms })))
    }

    pub fn add_passage(&mut self, doc_id: &str, title: Option<&str>, text: &str) -> Result<NodeId> {
        if text.trim().is_empty() {
            return Err(Error::Validation(format!("passage {doc_id:?} has empty text")));
        }
        if self.doc_index.contains_key(doc_id) {
            return Err(Error::Conflict(format!("duplicate doc_id {doc_id:?}")));
        }
        let id = self.next_node_id()?;
        self.doc_index.insert(doc_id.to_string(), id);
        Ok(self.push_node(Node::Passage(PassageNode {
            id,
            doc_id: doc_id.to_string(),
            title: title.map(str::to_string),
            text: text.to_string(),
        })))
    }

    pub fn add_triple(
        &mut self,
        subject: &str,
        relation: &str,
        object: &str,
        source_passage: NodeId,
    ) -> Result<TripleId> {
        if self.passage(source_passage).is_none() {
            return Err(Error::NotFound(format!("passage {source_passage}")));
        }
        let relation = relation.split_whitespace().collect::<Vec<_>>().join(" ");
        if relation.is_empty() {
            return Err(Error::Validation("empty relation".into()));
        }
        // Validate both arguments before mutating anything.
        if normalize_phrase(subject).is_empty() || normalize_phrase(object).is_empty() {
            return Err(Error::Validation(format!(
                "triple ({subject:?}, {relation:?}, {object:?}) has an empty argument"
            )));
        }
        let s = self.upsert_phrase(subject)?;
        let o = self.upsert_phrase(object)?;
        let key = (s, relation.clone(), o, source_passage);
        if let Some(&id) = self.triple_index.get(&key) {
            return Ok(id);
        }
        let id = TripleId(self.triples.len() as u32);
        self.triple_index.insert(key, id);
        self.triples.push(Triple {
            id,
            subject: s,
            relation,
            object: o,
            source_passage,
        });
        if s != o {
            let accumulate = !self.config.collapse_relation_edges;
            self.insert_edge(s, o, EdgeKind::Relation, 1.0, accumulate);
        }
        self.insert_edge(source_passage, s, EdgeKind::Context, 1.0, false);
        self.insert_edge(source_passage, o, EdgeKind::Context, 1.0, false);
        Ok(id)
    }

    pub fn add_synonym_edge(&mut self, a: NodeId, b: NodeId, similarity: f64) -> Result<()> {
        if a == b {
            return Err(Error::Validation(format!("synonym self-loop on {a}")));
        }
        for id in [a, b] {
            match self.nodes.get(id.index()) {
                Some(Node::Phrase(_)) => {}
                Some(Node::Passage(_)) => {
                    return Err(Error::Validation(format!("synonym endpoint {id} is a passage node")))
                }
                None => return Err(Error::NotFound(format!("node {id}"))),
            }
        }
        if !(similarity >= self.config.synonym_threshold) {
            return Err(Error::Validation(format!(
                "similarity {similarity} below synonym threshold {}",
                self.config.synonym_threshold
            )));
        }
        self.insert_edge(a, b, EdgeKind::Synonym, similarity.min(1.0), false);
        Ok(())
    }

    fn insert_edge(&mut self, x: NodeId, y: NodeId, kind: EdgeKind, weight: f64, accumulate: bool) {
        debug_assert_ne!(x, y);
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        if let Some(&idx) = self.edge_index.get(&(a, b, kind)) {
            if accumulate {
                self.edges[idx].weight += weight;
            }
            return;
        }
        let idx = self.edges.len();
        self.edges.push(Edge { a, b, kind, weight });
        self.edge_index.insert((a, b, kind), idx);
        self.incident[a.index()].push(idx);
        self.incident[b.index()].push(idx);
    }

    /// Re-inserts a persisted edge verbatim.
    pub(crate) fn restore_edge(&mut self, edge: Edge) -> Result<()> {
        let valid_ends = |n: NodeId| n.index() < self.nodes.len();
        if edge.a >= edge.b || !valid_ends(edge.a) || !valid_ends(edge.b) {
            return Err(Error::Validation(format!("bad edge endpoints {} {}", edge.a, edge.b)));
        }
        if self.edge_index.contains_key(&(edge.a, edge.b, edge.kind)) {
            return Err(Error::Validation("duplicate edge".into()));
        }
        if !(edge.weight > 0.0) {
            return Err(Error::Validation("non-positive edge weight".into()));
        }
        self.insert_edge(edge.a, edge.b, edge.kind, edge.weight, false);
        Ok(())
    }

    /// Re-inserts a persisted triple verbatim (edges are restored separately).
    pub(crate) fn restore_triple(&mut self, t: Triple) -> Result<()> {
        if t.id.index() != self.triples.len()
            || self.phrase(t.subject).is_none()
            || self.phrase(t.object).is_none()
            || self.passage(t.source_passage).is_none()
        {
            return Err(Error::Validation(format!("bad triple record {:?}", t.id)));
        }
        let key = (t.subject, t.relation.clone(), t.object, t.source_passage);
        if self.triple_index.insert(key, t.id).is_some() {
            return Err(Error::Validation("duplicate triple".into()));
        }
        self.triples.push(t);
        Ok(())
    }

    /// Re-inserts a persisted phrase with its full raw-form set.
    pub(crate) fn restore_phrase(&mut self, text: &str, raw_forms: BTreeSet<String>) -> Result<NodeId> {
        if text.is_empty() || normalize_phrase(text) != text || self.phrase_index.contains_key(text) {
            return Err(Error::Validation(format!("bad phrase record {text:?}")));
        }
        let id = self.next_node_id()?;
        self.phrase_index.insert(text.to_string(), id);
        Ok(self.push_node(Node::Phrase(PhraseNode {
            id,
            text: text.to_string(),
            raw_forms,
        })))
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(id.index())
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn phrase(&self, id: NodeId) -> Option<&PhraseNode> {
        match self.nodes.get(id.index()) {
            Some(Node::Phrase(p)) => Some(p),
            _ => None,
        }
    }

    pub fn passage(&self, id: NodeId) -> Option<&PassageNode> {
        match self.nodes.get(id.index()) {
            Some(Node::Passage(p)) => Some(p),
            _ => None,
        }
    }

    pub fn find_phrase(&self, text: &str) -> Option<NodeId> {
        self.phrase_index.get(&normalize_phrase(text)).copied()
    }

    pub fn find_passage(&self, doc_id: &str) -> Option<NodeId> {
        self.doc_index.get(doc_id).copied()
    }

    pub fn phrases(&self) -> impl Iterator<Item = &PhraseNode> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Phrase(p) => Some(p),
            _ => None,
        })
    }

    pub fn passages(&self) -> impl Iterator<Item = &PassageNode> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Passage(p) => Some(p),
            _ => None,
        })
    }

    pub fn triple(&self, id: TripleId) -> Option<&Triple> {
        self.triples.get(id.index())
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edges incident to `id`, in insertion order.
    pub fn incident_edges(&self, id: NodeId) -> impl Iterator<Item = &Edge> + '_ {
        self.incident
            .get(id.index())
            .into_iter()
            .flatten()
            .map(move |&i| &self.edges[i])
    }

    pub fn edge_between(&self, x: NodeId, y: NodeId, kind: EdgeKind) -> Option<&Edge> {
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        self.edge_index.get(&(a, b, kind)).map(|&i| &self.edges[i])
    }

    /// Renders a triple as `subject | relation | object` using normalized phrase text.
    pub fn triple_text(&self, t: &Triple) -> String {
        let s = self.phrase(t.subject).map_or("", |p| p.text.as_str());
        let o = self.phrase(t.object).map_or("", |p| p.text.as_str());
        format!("{s} | {} | {o}", t.relation)
    }

    pub fn stats(&self) -> GraphStats {
        let phrase_nodes = self.phrase_index.len();
        let passage_nodes = self.doc_index.len();
        let mut s = GraphStats {
            phrase_nodes,
            passage_nodes,
            total_nodes: phrase_nodes + passage_nodes,
            triples: self.triples.len(),
            ..GraphStats::default()
        };
        for e in &self.edges {
            match e.kind {
                EdgeKind::Relation => s.relation_edges += 1,
                EdgeKind::Synonym => s.synonym_edges += 1,
                EdgeKind::Context => s.context_edges += 1,
            }
        }
        s.total_edges = s.relation_edges + s.synonym_edges + s.context_edges;
        s
    }

    pub fn freeze(self) -> FrozenKg {
        let adjacency = Csr::build(&self, |_| true);
        FrozenKg {
            kg: self,
            adjacency,
            phrase_adjacency: OnceLock::new(),
        }
    }
}

pub fn graph_stats(kg: &OpenKG) -> GraphStats {
    kg.stats()
}

/// Compressed sparse rows over the undirected graph; parallel edges of
/// different kinds are merged by summing their weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

impl Csr {
    pub fn build(kg: &OpenKG, include: impl Fn(&Edge) -> bool) -> Self {
        let n = kg.node_count();
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        for e in kg.edges.iter().filter(|e| include(e)) {
            rows[e.a.index()].push((e.b.0, e.weight));
            rows[e.b.index()].push((e.a.0, e.weight));
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for mut row in rows {
            // stable sort keeps insertion order among equal targets, so the
            // merged sums are reproducible
            row.sort_by_key(|&(t, _)| t);
            for (t, w) in row {
                if targets.len() > *offsets.last().unwrap() && *targets.last().unwrap() == t {
                    *weights.last_mut().unwrap() += w;
                } else {
                    targets.push(t);
                    weights.push(w);
                }
            }
            offsets.push(targets.len());
        }
        Csr {
            offsets,
            targets,
            weights,
        }
    }

    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn entry_count(&self) -> usize {
        self.targets.len()
    }

    pub fn row(&self, node: usize) -> (&[u32], &[f64]) {
        let (s, e) = (self.offsets[node], self.offsets[node + 1]);
        (&self.targets[s..e], &self.weights[s..e])
    }

    pub fn weighted_degree(&self, node: usize) -> f64 {
        self.row(node).1.iter().sum()
    }
}

/// Immutable graph with its adjacency index. Safe to share across threads.
#[derive(Debug)]
pub struct FrozenKg {
    kg: OpenKG,
    adjacency: Csr,
    phrase_adjacency: OnceLock<Csr>,
}

impl FrozenKg {
    pub fn adjacency(&self) -> &Csr {
        &self.adjacency
    }

    /// Adjacency with context edges removed, i.e. the graph without passage nodes.
    pub fn phrase_adjacency(&self) -> &Csr {
        self.phrase_adjacency
            .get_or_init(|| Csr::build(&self.kg, |e| e.kind != EdgeKind::Context))
    }

    pub fn into_inner(self) -> OpenKG {
        self.kg
    }
}

impl Clone for FrozenKg {
    fn clone(&self) -> Self {
        FrozenKg {
            kg: self.kg.clone(),
            adjacency: self.adjacency.clone(),
            phrase_adjacency: OnceLock::new(),
        }
    }
}

impl Deref for FrozenKg {
    type Target = OpenKG;

    fn deref(&self) -> &OpenKG {
        &self.kg
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kg_with_passage() -> (OpenKG, NodeId) {
        let mut kg = OpenKG::default();
        let p = kg.add_passage("m1", Some("I. P. Paul"), "I. P. Paul was from Thrissur.").unwrap();
        (kg, p)
    }

    #[test]
    fn upsert_is_idempotent_and_case_folded() {
        let mut kg = OpenKG::default();
        let a = kg.upsert_phrase("Thrissur").unwrap();
        assert_eq!(kg.upsert_phrase("Thrissur").unwrap(), a);
        let b = kg.upsert_phrase("Erik Hort").unwrap();
        assert_eq!(kg.upsert_phrase("erik  hort ").unwrap(), b);
        assert_eq!(kg.stats().phrase_nodes, 2);
        assert_eq!(kg.phrase(b).unwrap().raw_forms.len(), 2);
        assert!(matches!(kg.upsert_phrase("  "), Err(Error::Validation(_))));
    }

    #[test]
    fn duplicate_doc_id_conflicts() {
        let (mut kg, _) = kg_with_passage();
        assert_eq!(kg.stats().passage_nodes, 1);
        assert!(matches!(kg.add_passage("m1", None, "other"), Err(Error::Conflict(_))));
        assert_eq!(kg.stats().passage_nodes, 1);
    }

    #[test]
    fn add_triple_creates_relation_and_context_edges() {
        let (mut kg, p) = kg_with_passage();
        let t = kg.add_triple("I. P. Paul", "from", "Thrissur", p).unwrap();
        let s = kg.stats();
        assert_eq!((s.phrase_nodes, s.passage_nodes, s.relation_edges, s.synonym_edges, s.context_edges), (2, 1, 1, 0, 2));
        assert_eq!(kg.add_triple("I. P. Paul", "from", "Thrissur", p).unwrap(), t);
        assert_eq!(kg.stats(), s);
    }

    #[test]
    fn self_referential_triple_has_no_self_loop() {
        let (mut kg, p) = kg_with_passage();
        kg.add_triple("A", "r", "A", p).unwrap();
        let s = kg.stats();
        assert_eq!((s.phrase_nodes, s.relation_edges, s.context_edges), (1, 0, 1));
    }

    #[test]
    fn add_triple_unknown_passage() {
        let mut kg = OpenKG::default();
        let phrase = kg.upsert_phrase("x").unwrap();
        assert!(matches!(kg.add_triple("a", "r", "b", NodeId(99)), Err(Error::NotFound(_))));
        assert!(matches!(kg.add_triple("a", "r", "b", phrase), Err(Error::NotFound(_))));
    }

    #[test]
    fn synonym_edges() {
        let mut kg = OpenKG::default();
        let p1 = kg.upsert_phrase("city of thrissur").unwrap();
        let p2 = kg.upsert_phrase("thrissur city").unwrap();
        kg.add_synonym_edge(p1, p2, 0.85).unwrap();
        let from_a: Vec<_> = kg.incident_edges(p1).collect();
        let from_b: Vec<_> = kg.incident_edges(p2).collect();
        assert_eq!(from_a.len(), 1);
        assert_eq!(from_a, from_b);
        assert_eq!(from_a[0].weight, 0.85);
        assert_eq!(from_a[0].other(p1), p2);
        assert!(matches!(kg.add_synonym_edge(p1, p1, 0.9), Err(Error::Validation(_))));
        let p3 = kg.upsert_phrase("kerala").unwrap();
        assert!(matches!(kg.add_synonym_edge(p1, p3, 0.79), Err(Error::Validation(_))));
        kg.add_synonym_edge(p1, p3, 0.8).unwrap();
        let doc = kg.add_passage("d", None, "text").unwrap();
        assert!(matches!(kg.add_synonym_edge(p1, doc, 0.95), Err(Error::Validation(_))));
        assert!(matches!(kg.add_synonym_edge(p1, p2, f64::NAN), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_stats() {
        assert_eq!(OpenKG::default().stats(), GraphStats::default());
    }

    #[test]
    fn relation_multiplicity_flag() {
        let mut kg = OpenKG::new(KgConfig {
            collapse_relation_edges: false,
            ..KgConfig::default()
        });
        let p = kg.add_passage("a", None, "x").unwrap();
        let q = kg.add_passage("b", None, "y").unwrap();
        kg.add_triple("s", "r", "o", p).unwrap();
        kg.add_triple("s", "r", "o", q).unwrap();
        kg.add_triple("o", "r2", "s", p).unwrap();
        let e = kg.edge_between(kg.find_phrase("s").unwrap(), kg.find_phrase("o").unwrap(), EdgeKind::Relation).unwrap();
        assert_eq!(e.weight, 3.0);
        assert_eq!(kg.stats().relation_edges, 1);
    }

    #[test]
    fn csr_merges_parallel_kinds() {
        let mut kg = OpenKG::default();
        let p = kg.add_passage("a", None, "x").unwrap();
        kg.add_triple("alpha", "r", "beta", p).unwrap();
        let a = kg.find_phrase("alpha").unwrap();
        let b = kg.find_phrase("beta").unwrap();
        kg.add_synonym_edge(a, b, 0.9).unwrap();
        let frozen = kg.freeze();
        let (t, w) = frozen.adjacency().row(a.index());
        assert_eq!(t, &[p.0, b.0]);
        assert_eq!(w, &[1.0, 1.9]);
        let (t, _) = frozen.phrase_adjacency().row(a.index());
        assert_eq!(t, &[b.0]);
        assert_eq!(frozen.adjacency().entry_count(), 6);
    }

    #[derive(Clone, Debug)]
    enum Op {
        Passage(u8),
        Triple(u8, u8, u8, u8),
        Synonym(u8, u8, u8),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0u8..6).prop_map(Op::Passage),
            (0u8..8, 0u8..3, 0u8..8, 0u8..6).prop_map(|(s, r, o, p)| Op::Triple(s, r, o, p)),
            (0u8..8, 0u8..8, 0u8..100).prop_map(|(a, b, s)| Op::Synonym(a, b, s)),
        ]
    }

    /// Applies `op`; true when it was accepted (and belongs in the event log).
    fn apply(kg: &mut OpenKG, op: &Op) -> bool {
        match *op {
            Op::Passage(d) => kg.add_passage(&format!("doc{d}"), None, "body").is_ok(),
            Op::Triple(s, r, o, p) => match kg.find_passage(&format!("doc{p}")) {
                Some(pid) => {
                    kg.add_triple(&format!("Phrase {s}"), &format!("rel{r}"), &format!("phrase {o}"), pid).unwrap();
                    true
                }
                None => false,
            },
            Op::Synonym(a, b, s) => {
                match (kg.find_phrase(&format!("phrase {a}")), kg.find_phrase(&format!("phrase {b}"))) {
                    (Some(x), Some(y)) => kg.add_synonym_edge(x, y, 0.7 + 0.3 * s as f64 / 99.0).is_ok(),
                    _ => false,
                }
            }
        }
    }

    proptest! {
        #[test]
        fn edge_invariants_hold_and_replay_is_idempotent(ops in proptest::collection::vec(op(), 0..80)) {
            let mut kg = OpenKG::default();
            let log: Vec<Op> = ops.iter().filter(|op| apply(&mut kg, op)).cloned().collect();
            let threshold = kg.config().synonym_threshold;
            for e in kg.edges() {
                prop_assert!(e.a < e.b);
                let (na, nb) = (kg.node(e.a).unwrap(), kg.node(e.b).unwrap());
                match e.kind {
                    EdgeKind::Relation => {
                        prop_assert!(na.is_phrase() && nb.is_phrase());
                        prop_assert_eq!(e.weight, 1.0);
                    }
                    EdgeKind::Synonym => {
                        prop_assert!(na.is_phrase() && nb.is_phrase());
                        prop_assert!(e.weight >= threshold && e.weight <= 1.0);
                    }
                    EdgeKind::Context => {
                        prop_assert_eq!(e.weight, 1.0);
                        let (passage, phrase) = if na.is_phrase() { (e.b, e.a) } else { (e.a, e.b) };
                        prop_assert!(kg.passage(passage).is_some() && kg.phrase(phrase).is_some());
                        prop_assert!(kg.triples().iter().any(|t| t.source_passage == passage
                            && (t.subject == phrase || t.object == phrase)));
                    }
                }
            }
            // adjacency consistency
            let frozen = kg.clone().freeze();
            let total: usize = (0..frozen.node_count()).map(|i| frozen.adjacency().row(i).0.len()).sum();
            let distinct_pairs: std::collections::BTreeSet<_> = kg.edges().iter().map(|e| (e.a, e.b)).collect();
            prop_assert_eq!(total, 2 * distinct_pairs.len());

            // independent recount over the accepted events
            use std::collections::BTreeSet as Set;
            let mut phrases = Set::new();
            let mut passages = Set::new();
            let mut relations = Set::new();
            let mut contexts = Set::new();
            let mut triples = Set::new();
            let mut synonyms = Set::new();
            for op in &log {
                match *op {
                    Op::Passage(d) => { passages.insert(d); }
                    Op::Triple(s, r, o, p) => {
                        phrases.insert(s);
                        phrases.insert(o);
                        triples.insert((s, r, o, p));
                        if s != o { relations.insert((s.min(o), s.max(o))); }
                        contexts.insert((p, s));
                        contexts.insert((p, o));
                    }
                    Op::Synonym(a, b, _) => { synonyms.insert((a.min(b), a.max(b))); }
                }
            }
            let st = kg.stats();
            prop_assert_eq!(
                (st.phrase_nodes, st.passage_nodes, st.relation_edges, st.context_edges, st.synonym_edges, st.triples),
                (phrases.len(), passages.len(), relations.len(), contexts.len(), synonyms.len(), triples.len())
            );
            prop_assert_eq!(st.total_nodes, st.phrase_nodes + st.passage_nodes);
            prop_assert_eq!(st.total_edges, st.relation_edges + st.synonym_edges + st.context_edges);

            // replaying the log onto a fresh graph reproduces it; replaying
            // triples and synonyms again changes nothing
            let before = kg.stats();
            let mut fresh = OpenKG::default();
            for op in &log {
                prop_assert!(apply(&mut fresh, op));
            }
            prop_assert_eq!(fresh.stats(), before);
            for op in log.iter().filter(|op| !matches!(op, Op::Passage(_))) {
                apply(&mut kg, op);
            }
            prop_assert_eq!(kg.stats(), before);
        }
    }
}
