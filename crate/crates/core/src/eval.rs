//! Retrieval and QA metrics, evaluation runs, ablations and the corpus
//! expansion protocol.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::extract::{CorpusRecord, Extractor};
use crate::indexer::{IndexBuilder, IndexConfig};
use crate::linker::{FilterMode, LinkMode};
use crate::retriever::{answer_question, Provenance, RankedPassages, Reader, RetrievalConfig, Retriever};
use crate::text::normalize_answer;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalQuery {
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub answers: Vec<String>,
    #[serde(default)]
    pub gold_passage_ids: Vec<String>,
}

impl EvalQuery {
    pub fn new(id: &str, question: &str, answers: &[&str], gold: &[&str]) -> Self {
        EvalQuery {
            id: id.into(),
            question: question.into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            gold_passage_ids: gold.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// `|top-k ∩ gold| / |gold|`; `None` when gold is empty or `k` is zero.
pub fn recall_at_k<S: AsRef<str>, G: AsRef<str>>(retrieved: &[S], gold: &[G], k: usize) -> Option<f64> {
    let gold: HashSet<&str> = gold.iter().map(AsRef::as_ref).collect();
    if gold.is_empty() || k == 0 {
        return None;
    }
    let top: HashSet<&str> = retrieved.iter().take(k).map(AsRef::as_ref).collect();
    Some(top.intersection(&gold).count() as f64 / gold.len() as f64)
}

pub fn em_score(prediction: &str, answers: &[String]) -> f64 {
    let p = normalize_answer(prediction);
    if answers.iter().any(|a| normalize_answer(a) == p) {
        1.0
    } else {
        0.0
    }
}

fn token_f1(prediction: &str, answer: &str) -> f64 {
    let p = normalize_answer(prediction);
    let a = normalize_answer(answer);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let at: Vec<&str> = a.split_whitespace().collect();
    if pt.is_empty() || at.is_empty() {
        return if pt == at { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &at {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / at.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token-multiset F1 against any answer alias.
pub fn f1_score(prediction: &str, answers: &[String]) -> f64 {
    answers.iter().map(|a| token_f1(prediction, a)).fold(0.0, f64::max)
}

/// Source of ranked doc ids for evaluation.
pub trait QueryRetriever {
    fn ranked_doc_ids(&self, question: &str, k: usize) -> Result<(Vec<String>, Option<Provenance>)>;
    fn has_doc(&self, doc_id: &str) -> bool;
}

/// Full pipeline with a fixed configuration.
pub struct PipelineEval<'a> {
    pub retriever: &'a Retriever,
    pub config: RetrievalConfig,
}

impl QueryRetriever for PipelineEval<'_> {
    fn ranked_doc_ids(&self, question: &str, k: usize) -> Result<(Vec<String>, Option<Provenance>)> {
        let config = RetrievalConfig {
            top_k: k,
            ..self.config.clone()
        };
        let out = self.retriever.retrieve(question, &config)?;
        Ok((out.doc_ids(), Some(out.provenance)))
    }

    fn has_doc(&self, doc_id: &str) -> bool {
        self.retriever.index().kg.find_passage(doc_id).is_some()
    }
}

/// Dense query–passage ranking only.
pub struct DenseEval<'a>(pub &'a Retriever);

impl QueryRetriever for DenseEval<'_> {
    fn ranked_doc_ids(&self, question: &str, k: usize) -> Result<(Vec<String>, Option<Provenance>)> {
        let out = self.0.dense_retrieve(question, k)?;
        Ok((out.doc_ids(), Some(out.provenance)))
    }

    fn has_doc(&self, doc_id: &str) -> bool {
        self.0.index().kg.find_passage(doc_id).is_some()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: String,
    pub question: String,
    pub retrieved: Vec<String>,
    pub gold: Vec<String>,
    pub recall_at_2: Option<f64>,
    pub recall_at_5: Option<f64>,
    pub prediction: Option<String>,
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub provenance: Option<Provenance>,
    /// Why the query was left out of the aggregates.
    pub excluded: Option<String>,
    /// Retrieval or reader failure.
    pub failed: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub recall_at_2: Option<f64>,
    pub recall_at_5: Option<f64>,
    pub em: Option<f64>,
    pub f1: Option<f64>,
    pub queries: usize,
    pub excluded: usize,
    pub failed: usize,
    pub fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub config_fingerprint: String,
    pub aggregates: Aggregates,
    pub records: Vec<QueryRecord>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

pub fn config_fingerprint<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

impl EvalReport {
    pub fn from_records(label: &str, config_fingerprint: String, records: Vec<QueryRecord>) -> Self {
        let counted = || records.iter().filter(|r| r.excluded.is_none() && r.failed.is_none());
        let aggregates = Aggregates {
            recall_at_2: mean(counted().filter_map(|r| r.recall_at_2)),
            recall_at_5: mean(counted().filter_map(|r| r.recall_at_5)),
            em: mean(counted().filter_map(|r| r.em)),
            f1: mean(counted().filter_map(|r| r.f1)),
            queries: counted().count(),
            excluded: records.iter().filter(|r| r.excluded.is_some()).count(),
            failed: records.iter().filter(|r| r.failed.is_some()).count(),
            fallbacks: records
                .iter()
                .filter(|r| r.provenance == Some(Provenance::DenseFallback))
                .count(),
        };
        EvalReport {
            label: label.into(),
            config_fingerprint,
            aggregates,
            records,
        }
    }

    /// True when some query referenced a passage missing from the index.
    pub fn has_missing_gold(&self) -> bool {
        self.records
            .iter()
            .any(|r| r.excluded.as_deref().is_some_and(|e| e.starts_with("missing gold")))
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn read_queries(path: &Path) -> Result<Vec<EvalQuery>> {
    read_jsonl(path)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    read_jsonl(path)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Validation(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

const EVAL_K: usize = 5;

fn retrieval_record(retriever: &dyn QueryRetriever, q: &EvalQuery) -> QueryRecord {
    let mut record = QueryRecord {
        id: q.id.clone(),
        question: q.question.clone(),
        gold: q.gold_passage_ids.clone(),
        ..Default::default()
    };
    if q.gold_passage_ids.is_empty() {
        tracing::warn!(query = %q.id, "query has no gold passages; skipped");
        record.excluded = Some("no gold passages".into());
        return record;
    }
    let missing: Vec<&String> = q.gold_passage_ids.iter().filter(|g| !retriever.has_doc(g)).collect();
    if !missing.is_empty() {
        tracing::error!(query = %q.id, ?missing, "gold passage not in index");
        record.excluded = Some(format!("missing gold passages: {missing:?}"));
        return record;
    }
    match retriever.ranked_doc_ids(&q.question, EVAL_K) {
        Ok((ids, provenance)) => {
            record.recall_at_2 = recall_at_k(&ids, &q.gold_passage_ids, 2);
            record.recall_at_5 = recall_at_k(&ids, &q.gold_passage_ids, 5);
            record.retrieved = ids;
            record.provenance = provenance;
        }
        Err(e) => record.failed = Some(e.to_string()),
    }
    record
}

/// Recall@2 and recall@5 per query. Queries whose gold passages are absent
/// from the index are flagged and excluded from the aggregates.
pub fn run_retrieval_eval(retriever: &dyn QueryRetriever, queries: &[EvalQuery], label: &str, fingerprint: String) -> EvalReport {
    let records = queries.iter().map(|q| retrieval_record(retriever, q)).collect();
    EvalReport::from_records(label, fingerprint, records)
}

/// Retrieve then read. Reader failures mark the query failed; recall is
/// reported alongside when gold passages are annotated.
pub fn run_qa_eval(
    retriever: &Retriever,
    config: &RetrievalConfig,
    queries: &[EvalQuery],
    reader: &dyn Reader,
    label: &str,
) -> Result<EvalReport> {
    if retriever.index().passages.is_empty() {
        return Err(Error::Precondition("QA evaluation needs a non-empty corpus".into()));
    }
    let mut records = Vec::with_capacity(queries.len());
    for q in queries {
        let mut record = QueryRecord {
            id: q.id.clone(),
            question: q.question.clone(),
            gold: q.gold_passage_ids.clone(),
            ..Default::default()
        };
        if q.answers.is_empty() {
            record.excluded = Some("no gold answers".into());
            records.push(record);
            continue;
        }
        let ranked: RankedPassages = match retriever.retrieve(&q.question, config) {
            Ok(r) => r,
            Err(e) => {
                record.failed = Some(e.to_string());
                records.push(record);
                continue;
            }
        };
        record.retrieved = ranked.doc_ids();
        record.provenance = Some(ranked.provenance);
        record.recall_at_2 = recall_at_k(&record.retrieved, &q.gold_passage_ids, 2);
        record.recall_at_5 = recall_at_k(&record.retrieved, &q.gold_passage_ids, 5);
        match answer_question(retriever.index(), &q.question, &ranked, reader) {
            Ok(answer) => {
                record.em = Some(em_score(&answer, &q.answers));
                record.f1 = Some(f1_score(&answer, &q.answers));
                record.prediction = Some(answer);
            }
            Err(e) => {
                tracing::warn!(query = %q.id, error = %e, "reader failed");
                record.failed = Some(e.to_string());
            }
        }
        records.push(record);
    }
    Ok(EvalReport::from_records(label, config_fingerprint(config), records))
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionMetric {
    #[default]
    RecallAt5,
    F1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpansionConfig {
    pub segments: usize,
    /// Extend the previous index instead of rebuilding from scratch.
    pub incremental: bool,
    pub metric: ExpansionMetric,
    pub index: IndexConfig,
    pub retrieval: RetrievalConfig,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            segments: 4,
            incremental: false,
            metric: ExpansionMetric::RecallAt5,
            index: IndexConfig::default(),
            retrieval: RetrievalConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPoint {
    pub segments_included: usize,
    pub passages: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionCurve {
    pub segments: usize,
    pub metric: ExpansionMetric,
    pub points: Vec<ExpansionPoint>,
}

/// Indexes segment 1, evaluates, then adds one segment at a time and
/// re-evaluates the same queries. Segments are contiguous equal slices of
/// `corpus`; the last absorbs any remainder.
pub fn run_expansion(
    corpus: &[CorpusRecord],
    queries: &[EvalQuery],
    config: &ExpansionConfig,
    embedder: Arc<dyn EmbeddingProvider>,
    extractor: Arc<dyn Extractor>,
    reader: Option<&dyn Reader>,
) -> Result<ExpansionCurve> {
    if config.segments < 2 {
        return Err(Error::Config(format!("expansion needs at least 2 segments, got {}", config.segments)));
    }
    if corpus.len() < config.segments {
        return Err(Error::Config("corpus smaller than the segment count".into()));
    }
    let segments = crate::synthetic::split_segments(corpus, config.segments);
    let first: HashSet<&str> = segments[0].iter().map(|c| c.doc_id.as_str()).collect();
    for q in queries {
        if let Some(g) = q.gold_passage_ids.iter().find(|g| !first.contains(g.as_str())) {
            return Err(Error::Config(format!("query {} has gold passage {g} outside segment 1", q.id)));
        }
    }
    if config.metric == ExpansionMetric::F1 && reader.is_none() {
        return Err(Error::Config("F1 expansion metric needs a reader".into()));
    }

    let mut builder: Option<IndexBuilder> = None;
    let mut points = Vec::with_capacity(config.segments);
    for step in 0..config.segments {
        let index = if config.incremental {
            let b = match builder.as_mut() {
                Some(b) => b,
                None => builder.insert(IndexBuilder::new(config.index.clone(), embedder.clone(), extractor.clone())?),
            };
            b.add_records(&segments[step])?;
            b.finish()?.0
        } else {
            let included: Vec<CorpusRecord> = segments[..=step].concat();
            let mut b = IndexBuilder::new(config.index.clone(), embedder.clone(), extractor.clone())?;
            b.add_records(&included)?;
            b.finish()?.0
        };
        let passages = index.passages.len();
        let retriever = Retriever::new(Arc::new(index), embedder.clone(), extractor.clone())?;
        let value = match (config.metric, reader) {
            (ExpansionMetric::F1, Some(reader)) => {
                run_qa_eval(&retriever, &config.retrieval, queries, reader, "expansion")?.aggregates.f1
            }
            _ => {
                let target = PipelineEval {
                    retriever: &retriever,
                    config: config.retrieval.clone(),
                };
                run_retrieval_eval(&target, queries, "expansion", String::new()).aggregates.recall_at_5
            }
        }
        .unwrap_or(0.0);
        tracing::info!(segments = step + 1, passages, value, "expansion point");
        points.push(ExpansionPoint {
            segments_included: step + 1,
            passages,
            value,
        });
    }
    Ok(ExpansionCurve {
        segments: config.segments,
        metric: config.metric,
        points,
    })
}

/// One ablation variant, parsed from `key=value` settings joined by commas,
/// e.g. `link=ner` or `link=node,filter=off`.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationMode {
    pub label: String,
    pub link: Option<LinkMode>,
    pub filter: Option<bool>,
    pub passage_nodes: Option<bool>,
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut mode = AblationMode {
            label: s.to_string(),
            link: None,
            filter: None,
            passage_nodes: None,
        };
        let on_off = |v: &str| match v {
            "on" => Ok(true),
            "off" => Ok(false),
            _ => Err(Error::Usage(format!("expected on|off in ablation mode {s:?}"))),
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("ablation mode {part:?} is not key=value")))?;
            match key {
                "link" => mode.link = Some(value.parse()?),
                "filter" => mode.filter = Some(on_off(value)?),
                "passage_nodes" => mode.passage_nodes = Some(on_off(value)?),
                _ => return Err(Error::Usage(format!("unknown ablation setting {key:?}"))),
            }
        }
        if mode.link.is_none() && mode.filter.is_none() && mode.passage_nodes.is_none() {
            return Err(Error::Usage(format!("empty ablation mode {s:?}")));
        }
        Ok(mode)
    }
}

impl AblationMode {
    pub fn apply(&self, base: &RetrievalConfig) -> RetrievalConfig {
        let mut c = base.clone();
        if let Some(link) = self.link {
            c.link_mode = link;
        }
        match self.filter {
            Some(false) => c.filter_mode = FilterMode::MockKeepAll,
            Some(true) if matches!(c.filter_mode, FilterMode::MockKeepAll | FilterMode::KeepAll) => {
                c.filter_mode = FilterMode::MockLexical
            }
            _ => {}
        }
        if let Some(p) = self.passage_nodes {
            c.passage_nodes = p;
        }
        c
    }
}

/// One retrieval report per mode, in the order given.
pub fn run_ablation(
    retriever: &Retriever,
    base: &RetrievalConfig,
    queries: &[EvalQuery],
    modes: &[String],
) -> Result<Vec<EvalReport>> {
    let parsed: Vec<AblationMode> = modes.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    Ok(parsed
        .iter()
        .map(|mode| {
            let config = mode.apply(base);
            let mut label = mode.label.clone();
            if mode.passage_nodes == Some(false) {
                label.push_str(" (surrogate: phrase-graph mass summed per passage)");
            }
            let target = PipelineEval {
                retriever,
                config: config.clone(),
            };
            run_retrieval_eval(&target, queries, &label, config_fingerprint(&config))
        })
        .collect())
}

/// Splits long text into chunks of at most `chunk_words` whitespace words.
pub fn segment_text(text: &str, chunk_words: usize) -> Vec<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    words.chunks(chunk_words.max(1)).map(|c| c.join(" ")).collect()
}

/// Segments every record; chunk `i` of document `d` becomes `d#i` with the same title.
pub fn segment_documents(records: &[CorpusRecord], chunk_words: usize) -> Result<Vec<CorpusRecord>> {
    if chunk_words == 0 {
        return Err(Error::Usage("chunk size must be at least 1 word".into()));
    }
    let mut out = Vec::new();
    for r in records {
        for (i, chunk) in segment_text(&r.text, chunk_words).into_iter().enumerate() {
            out.push(CorpusRecord::new(format!("{}#{i}", r.doc_id), r.title.as_deref(), chunk));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn recall_examples() {
        for case in crate::synthetic::recall_cases() {
            assert_eq!(recall_at_k(&case.retrieved, &case.gold, 5), Some(case.expected_recall_at_5));
        }
        assert_eq!(recall_at_k(&s(&["a", "b", "c"]), &s(&["b", "a"]), 5), Some(1.0));
        assert_eq!(recall_at_k(&s(&["a"]), &Vec::<String>::new(), 5), None);
    }

    #[test]
    fn em_f1_examples() {
        let g = s(&["Thrissur"]);
        assert_eq!(em_score("Thrissur", &g), 1.0);
        assert_eq!(f1_score("Thrissur", &g), 1.0);
        assert!((f1_score("the city of Thrissur", &g) - 0.5).abs() < 1e-12);
        assert_eq!(em_score("the city of Thrissur", &g), 0.0);
        let g = s(&["Saxony-Anhalt"]);
        assert_eq!(em_score("Montebello", &g), 0.0);
        assert_eq!(f1_score("Montebello", &g), 0.0);
        // aliases: best match wins
        assert_eq!(f1_score("Marie de' Medici", &s(&["Maria de Medici", "Marie de' Medici"])), 1.0);
    }

    struct Fixed(HashMap<String, Vec<String>>);

    impl QueryRetriever for Fixed {
        fn ranked_doc_ids(&self, q: &str, _k: usize) -> Result<(Vec<String>, Option<Provenance>)> {
            Ok((self.0.get(q).cloned().unwrap_or_default(), None))
        }
        fn has_doc(&self, d: &str) -> bool {
            d != "ghost"
        }
    }

    fn queries() -> Vec<EvalQuery> {
        vec![
            EvalQuery::new("1", "q1", &["x"], &["a", "b"]),
            EvalQuery::new("2", "q2", &["y"], &["c"]),
        ]
    }

    #[test]
    fn oracle_and_adversarial_retrievers() {
        let oracle = Fixed(HashMap::from([("q1".into(), s(&["a", "b"])), ("q2".into(), s(&["c"]))]));
        let r = run_retrieval_eval(&oracle, &queries(), "oracle", String::new());
        assert_eq!(r.aggregates.recall_at_5, Some(1.0));
        let adversary = Fixed(HashMap::from([("q1".into(), s(&["z"])), ("q2".into(), s(&["z"]))]));
        let r = run_retrieval_eval(&adversary, &queries(), "adv", String::new());
        assert_eq!(r.aggregates.recall_at_5, Some(0.0));
    }

    #[test]
    fn missing_gold_is_flagged_and_excluded() {
        let mut qs = queries();
        qs.push(EvalQuery::new("3", "q3", &["z"], &["ghost"]));
        qs.push(EvalQuery::new("4", "q4", &["z"], &[]));
        let oracle = Fixed(HashMap::from([("q1".into(), s(&["a", "b"])), ("q2".into(), s(&["x", "c"]))]));
        let r = run_retrieval_eval(&oracle, &qs, "t", String::new());
        assert!(r.has_missing_gold());
        assert_eq!(r.aggregates.excluded, 2);
        assert_eq!(r.aggregates.queries, 2);
        assert_eq!(r.aggregates.recall_at_2, Some(1.0));
    }

    #[test]
    fn ablation_mode_parsing() {
        let m: AblationMode = "link=ner".parse().unwrap();
        assert_eq!(m.link, Some(LinkMode::Ner));
        let m: AblationMode = "link=node,filter=off".parse().unwrap();
        assert_eq!(m.filter, Some(false));
        for bad in ["link=graph", "filter=maybe", "speed=fast", "nonsense", ""] {
            assert!(matches!(bad.parse::<AblationMode>(), Err(Error::Usage(_))), "{bad}");
        }
        let off: AblationMode = "filter=off".parse().unwrap();
        let keep_all = RetrievalConfig { filter_mode: FilterMode::MockKeepAll, ..Default::default() };
        assert_eq!(off.apply(&RetrievalConfig::default()), keep_all);
    }

    #[test]
    fn segmentation() {
        assert_eq!(segment_text("a b c d e", 2), vec!["a b", "c d", "e"]);
        let docs = segment_documents(&[CorpusRecord::new("d", Some("T"), "a b c")], 2).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].doc_id, "d#1");
        assert!(segment_documents(&[], 0).is_err());
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["the", "a", "city", "of", "thrissur", "paul", "Kerala", "an", "x"]).prop_map(String::from)
    }

    proptest! {
        #[test]
        fn recall_monotone_in_k(ret in prop::collection::vec(0u8..20, 0..15), gold in prop::collection::vec(0u8..20, 1..6)) {
            let ret: Vec<String> = ret.iter().map(|x| x.to_string()).collect();
            let gold: Vec<String> = gold.iter().map(|x| x.to_string()).collect();
            let mut last = 0.0;
            for k in 1..20 {
                let r = recall_at_k(&ret, &gold, k).unwrap();
                prop_assert!(r >= last && (0.0..=1.0).contains(&r));
                last = r;
            }
        }

        #[test]
        fn f1_symmetric_and_bounds_em(p in prop::collection::vec(word(), 0..6), a in prop::collection::vec(word(), 0..6)) {
            let (p, a) = (p.join(" "), a.join(" "));
            let f_pa = f1_score(&p, &[a.clone()]);
            let f_ap = f1_score(&a, &[p.clone()]);
            prop_assert!((f_pa - f_ap).abs() < 1e-12);
            prop_assert!(em_score(&p, &[a.clone()]) <= f_pa);
        }
    }
}
