//! OpenIE extraction clients: a hermetic rule-based mock and a remote client.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::remote::{JsonClient, RemoteError};
use crate::text::is_stopword;

/// One ingested passage. `fixture_triples`, when present, bypass extraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_triples: Option<Vec<RawTriple>>,
}

impl CorpusRecord {
    pub fn new(doc_id: impl Into<String>, title: Option<&str>, text: impl Into<String>) -> Self {
        CorpusRecord {
            doc_id: doc_id.into(),
            title: title.map(str::to_string),
            text: text.into(),
            fixture_triples: None,
        }
    }

    pub fn with_triples(mut self, triples: &[(&str, &str, &str)]) -> Self {
        self.fixture_triples = Some(triples.iter().map(|&(s, r, o)| RawTriple::new(s, r, o)).collect());
        self
    }

    /// Text handed to the embedding provider: `title\ntext` when titled.
    pub fn embedding_text(&self) -> String {
        passage_embedding_text(self.title.as_deref(), &self.text)
    }
}

pub fn passage_embedding_text(title: Option<&str>, text: &str) -> String {
    match title {
        Some(t) if !t.is_empty() => format!("{t}\n{text}"),
        _ => text.to_string(),
    }
}

/// `(subject, relation, object)` strings, serialized as a 3-element array.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[String; 3]", into = "[String; 3]")]
pub struct RawTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl RawTriple {
    pub fn new(subject: &str, relation: &str, object: &str) -> Self {
        RawTriple {
            subject: subject.to_string(),
            relation: relation.to_string(),
            object: object.to_string(),
        }
    }
}

impl From<[String; 3]> for RawTriple {
    fn from([subject, relation, object]: [String; 3]) -> Self {
        RawTriple { subject, relation, object }
    }
}

impl From<RawTriple> for [String; 3] {
    fn from(t: RawTriple) -> Self {
        [t.subject, t.relation, t.object]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    #[serde(default)]
    pub entities: Vec<String>,
    pub triples: Vec<RawTriple>,
}

pub trait Extractor: Send + Sync {
    fn fingerprint(&self) -> String;

    /// Triples (and named entities) of one passage.
    fn extract(&self, record: &CorpusRecord) -> Result<Extraction>;

    /// Named entities of a query, for entity-to-node linking.
    fn query_entities(&self, query: &str) -> Result<Vec<String>>;
}

pub fn extract_triples(extractor: &dyn Extractor, record: &CorpusRecord) -> Result<Vec<RawTriple>> {
    if record.text.trim().is_empty() {
        return Err(Error::Precondition(format!("passage {:?} has empty text", record.doc_id)));
    }
    Ok(extractor.extract(record)?.triples)
}

/// Relation phrases recognised by the rule-based extractor, longest first.
const VERB_PHRASES: &[&str] = &[
    "is the daughter of",
    "is the capital of",
    "was succeeded by",
    "is the father of",
    "is the mother of",
    "was designed by",
    "is a member of",
    "was founded by",
    "graduated from",
    "is the son of",
    "is located in",
    "was mayor of",
    "was born in",
    "was born on",
    "lies within",
    "belongs to",
    "flows into",
    "studied at",
    "is part of",
    "worked for",
    "plays for",
    "works for",
    "composed",
    "directed",
    "lives in",
    "died in",
    "founded",
    "married",
    "borders",
    "manages",
    "was an",
    "wrote",
    "is an",
    "was a",
    "is a",
    "from",
];

/// Hermetic extractor: fixture triples when present, otherwise one
/// `X <verb phrase> Y` match per sentence from a closed verb list.
#[derive(Clone, Debug, Default)]
pub struct MockExtractor;

impl MockExtractor {
    pub fn rule_based(text: &str) -> Vec<RawTriple> {
        text.split(['.', '!', '?', ';', '\n'])
            .filter_map(extract_sentence)
            .collect()
    }
}

fn trim_arg(s: &str) -> &str {
    s.trim().trim_matches(|c: char| c == ',' || c == ':' || c == '"' || c == '\'').trim()
}

fn extract_sentence(sentence: &str) -> Option<RawTriple> {
    // ASCII lowercasing keeps byte offsets aligned with `sentence`
    let lower = format!(" {} ", sentence.to_ascii_lowercase());
    let mut best: Option<(usize, &str)> = None;
    for verb in VERB_PHRASES {
        let needle = format!(" {verb} ");
        if let Some(pos) = lower.find(&needle) {
            let better = match best {
                None => true,
                Some((bp, bv)) => pos < bp || (pos == bp && verb.len() > bv.len()),
            };
            if better {
                best = Some((pos, verb));
            }
        }
    }
    let (pos, verb) = best?;
    let subject = trim_arg(sentence.get(..pos)?);
    let object = trim_arg(sentence.get(pos + verb.len() + 1..)?);
    if subject.is_empty() || object.is_empty() {
        return None;
    }
    Some(RawTriple::new(subject, verb, object))
}

/// Capitalized word runs, skipping a capitalized function word opening the query.
pub fn capitalized_entities(query: &str) -> Vec<String> {
    let mut entities = Vec::new();
    let mut run: Vec<&str> = Vec::new();
    for (i, raw) in query.split_whitespace().enumerate() {
        let word = raw.trim_matches(|c: char| !c.is_alphanumeric() && c != '.');
        let word = word.trim_end_matches('.').trim_start_matches('.');
        let capitalized = word.chars().next().is_some_and(char::is_uppercase);
        let opener = i == 0 && is_stopword(&word.to_lowercase());
        if capitalized && !opener {
            // keep initials like "I.P." intact
            let keep = raw.trim_matches(|c: char| !c.is_alphanumeric() && c != '.');
            let keep = if keep.matches('.').count() >= 2 { keep } else { word };
            run.push(keep);
        } else if !run.is_empty() {
            entities.push(run.join(" "));
            run.clear();
        }
        let ends_clause = raw.ends_with([',', ';', '?', '!']);
        if ends_clause && !run.is_empty() {
            entities.push(run.join(" "));
            run.clear();
        }
    }
    if !run.is_empty() {
        entities.push(run.join(" "));
    }
    entities.dedup();
    entities
}

impl Extractor for MockExtractor {
    fn fingerprint(&self) -> String {
        "mock-openie-v1".into()
    }

    fn extract(&self, record: &CorpusRecord) -> Result<Extraction> {
        let triples = match &record.fixture_triples {
            Some(t) => t.clone(),
            None => MockExtractor::rule_based(&record.text),
        };
        let mut entities = Vec::new();
        for t in &triples {
            for arg in [&t.subject, &t.object] {
                if !entities.contains(arg) {
                    entities.push(arg.clone());
                }
            }
        }
        Ok(Extraction { entities, triples })
    }

    fn query_entities(&self, query: &str) -> Result<Vec<String>> {
        Ok(capitalized_entities(query))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionClientConfig {
    pub mode: crate::embedding::ProviderMode,
    pub endpoint: Option<String>,
    /// Prompt template text forwarded to the service, if any.
    pub prompt_template: Option<String>,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_ms: u64,
}

impl Default for ExtractionClientConfig {
    fn default() -> Self {
        ExtractionClientConfig {
            mode: crate::embedding::ProviderMode::Mock,
            endpoint: None,
            prompt_template: None,
            temperature: 0.0,
            max_retries: 2,
            timeout_ms: 60_000,
        }
    }
}

impl ExtractionClientConfig {
    pub fn build(&self) -> Result<Arc<dyn Extractor>> {
        match self.mode {
            crate::embedding::ProviderMode::Mock => Ok(Arc::new(MockExtractor)),
            crate::embedding::ProviderMode::Remote => {
                let endpoint = self
                    .endpoint
                    .as_deref()
                    .ok_or_else(|| Error::Config("remote extraction client needs an endpoint".into()))?;
                Ok(Arc::new(RemoteExtractor::new(endpoint, self)))
            }
        }
    }
}

#[derive(Serialize)]
struct ExtractRequest<'a> {
    passage: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_template: Option<&'a str>,
    temperature: f64,
}

/// Client for `{"passage": text}` → `{"entities": [...], "triples": [[s, r, o], ...]}`.
#[derive(Clone, Debug)]
pub struct RemoteExtractor {
    client: JsonClient,
    endpoint: String,
    prompt_template: Option<String>,
    temperature: f64,
    max_retries: u32,
}

impl RemoteExtractor {
    pub fn new(endpoint: &str, cfg: &ExtractionClientConfig) -> Self {
        RemoteExtractor {
            client: JsonClient::new(endpoint, cfg.timeout_ms),
            endpoint: endpoint.to_string(),
            prompt_template: cfg.prompt_template.clone(),
            temperature: cfg.temperature,
            max_retries: cfg.max_retries,
        }
    }

    fn call(&self, passage: &str) -> Result<Extraction> {
        let request = ExtractRequest {
            passage,
            prompt_template: self.prompt_template.as_deref(),
            temperature: self.temperature,
        };
        let mut attempt = 0;
        loop {
            match self.client.post::<_, Extraction>(&request) {
                Ok(x) => return Ok(x),
                Err(RemoteError::Transport(m)) if attempt < self.max_retries => {
                    tracing::debug!(attempt, error = %m, "retrying extraction call");
                    attempt += 1;
                }
                Err(e) => {
                    return Err(Error::Provider {
                        provider: "extraction",
                        batch: None,
                        retryable: matches!(e, RemoteError::Transport(_)),
                        message: e.to_string(),
                    })
                }
            }
        }
    }
}

impl Extractor for RemoteExtractor {
    fn fingerprint(&self) -> String {
        format!("remote-openie:{}:t={}", self.endpoint, self.temperature)
    }

    fn extract(&self, record: &CorpusRecord) -> Result<Extraction> {
        if let Some(t) = &record.fixture_triples {
            return Ok(Extraction {
                entities: Vec::new(),
                triples: t.clone(),
            });
        }
        self.call(&record.text)
    }

    fn query_entities(&self, query: &str) -> Result<Vec<String>> {
        Ok(self.call(query)?.entities)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::remote::test_server;

    #[test]
    fn verb_list_is_longest_first() {
        for w in VERB_PHRASES.windows(2) {
            assert!(w[0].len() >= w[1].len(), "{} before {}", w[0], w[1]);
        }
    }

    #[test]
    fn fixture_triples_pass_through_verbatim() {
        let rec = CorpusRecord::new("m1", Some("I. P. Paul"), "I. P. Paul was a politician.")
            .with_triples(&[("I. P. Paul", "from", "Thrissur")]);
        let got = extract_triples(&MockExtractor, &rec).unwrap();
        assert_eq!(got, vec![RawTriple::new("I. P. Paul", "from", "Thrissur")]);
    }

    #[test]
    fn empty_text_is_precondition_error() {
        let rec = CorpusRecord::new("x", None, "   ");
        assert!(matches!(extract_triples(&MockExtractor, &rec), Err(Error::Precondition(_))));
    }

    #[test]
    fn rule_based_patterns() {
        let got = MockExtractor::rule_based("Erik Hort was born in Montebello. Montebello is located in New York! Nothing here");
        assert_eq!(
            got,
            vec![
                RawTriple::new("Erik Hort", "was born in", "Montebello"),
                RawTriple::new("Montebello", "is located in", "New York"),
            ]
        );
        // earliest match wins, longest at equal position
        let got = MockExtractor::rule_based("Kelra Vost married Dimo Pell from Arvane");
        assert_eq!(got, vec![RawTriple::new("Kelra Vost", "married", "Dimo Pell from Arvane")]);
    }

    #[test]
    fn query_entities_from_capitalization() {
        assert_eq!(capitalized_entities("In what city was I.P. Paul born?"), vec!["I.P. Paul"]);
        assert_eq!(
            capitalized_entities("What province contains the birthplace of Zorvath Quellin?"),
            vec!["Zorvath Quellin"]
        );
        assert_eq!(capitalized_entities("Did Erik Hort meet Ana Lind, or not?"), vec!["Erik Hort", "Ana Lind"]);
        assert!(capitalized_entities("where is it").is_empty());
    }

    #[test]
    fn raw_triple_serializes_as_array() {
        let t = RawTriple::new("a", "b", "c");
        assert_eq!(serde_json::to_string(&t).unwrap(), r#"["a","b","c"]"#);
        let rec: CorpusRecord =
            serde_json::from_str(r#"{"doc_id":"d","text":"t","fixture_triples":[["x","y","z"]]}"#).unwrap();
        assert_eq!(rec.fixture_triples.unwrap()[0], RawTriple::new("x", "y", "z"));
    }

    #[test]
    fn remote_extractor_parses_and_flags_malformed() {
        let stub = test_server::serve(|body| {
            if body.contains("garbage") {
                (200, "not json at all".into())
            } else {
                (200, r#"{"entities":["A"],"triples":[["A","r","B"]]}"#.into())
            }
        });
        let cfg = ExtractionClientConfig {
            mode: crate::embedding::ProviderMode::Remote,
            endpoint: Some(stub.url.clone()),
            ..Default::default()
        };
        let client = cfg.build().unwrap();
        let ok = client.extract(&CorpusRecord::new("d", None, "A r B")).unwrap();
        assert_eq!(ok.triples, vec![RawTriple::new("A", "r", "B")]);
        let err = client.extract(&CorpusRecord::new("d", None, "garbage")).unwrap_err();
        assert!(matches!(err, Error::Provider { retryable: false, .. }));
        assert_eq!(client.query_entities("who is A").unwrap(), vec!["A"]);
        let sent: serde_json::Value = serde_json::from_str(&stub.requests.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["passage"], "A r B");
        assert_eq!(sent["temperature"], 0.0);
    }
}
