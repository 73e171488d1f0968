//! Generated corpora and query sets used by tests, benches and the CLI demo data.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::EvalQuery;
use crate::extract::CorpusRecord;
use crate::kg::TripleId;
use crate::linker::ScoredTriple;

/// Corpus plus the queries evaluated against it.
#[derive(Clone, Debug)]
pub struct QaFixture {
    pub corpus: Vec<CorpusRecord>,
    pub queries: Vec<EvalQuery>,
}

/// Eight short biography and geography passages with annotated triples.
pub fn toy_corpus() -> Vec<CorpusRecord> {
    vec![
        CorpusRecord::new(
            "toy-paul",
            Some("I. P. Paul"),
            "I. P. Paul was an Indian politician from Thrissur who served as mayor of the Thrissur municipal corporation.",
        )
        .with_triples(&[
            ("I. P. Paul", "from", "Thrissur"),
            ("I. P. Paul", "was mayor of", "Thrissur municipal corporation"),
        ]),
        CorpusRecord::new(
            "toy-thrissur",
            Some("Thrissur"),
            "Thrissur is a city in the Indian state of Kerala and is often called its cultural capital.",
        )
        .with_triples(&[("Thrissur", "is a city in", "Kerala"), ("Thrissur", "called", "cultural capital of Kerala")]),
        CorpusRecord::new(
            "toy-ayefele",
            Some("Yinka Ayefele - Early life"),
            "Yinka Ayefele grew up in Ipetu-Ijesha and studied at the Ibadan Polytechnic before a car accident in 1997.",
        )
        .with_triples(&[("Yinka Ayefele", "grew up in", "Ipetu-Ijesha"), ("Yinka Ayefele", "studied at", "Ibadan Polytechnic")]),
        CorpusRecord::new(
            "toy-parker",
            Some("Paul Parker (singer)"),
            "Paul Parker is an American singer known for the dance hit Right on Target.",
        )
        .with_triples(&[("Paul Parker", "is a", "singer"), ("Paul Parker", "known for", "Right on Target")]),
        CorpusRecord::new(
            "toy-hort",
            Some("Erik Hort"),
            "Erik Hort is a former soccer player who was born in Montebello, New York.",
        )
        .with_triples(&[
            ("Erik Hort", "born in", "Montebello"),
            ("Erik Hort", "born in", "New York"),
            ("Erik Hort", "is a", "soccer player"),
        ]),
        CorpusRecord::new(
            "toy-montebello",
            Some("Montebello, New York"),
            "Montebello is a village in the town of Ramapo and lies within Rockland County.",
        )
        .with_triples(&[("Montebello", "is a village in", "Ramapo"), ("Montebello", "lies within", "Rockland County")]),
        CorpusRecord::new(
            "toy-horton",
            Some("Horton Park (Saint Paul, Minnesota)"),
            "Horton Park is a small park in the Midway neighborhood of Saint Paul.",
        )
        .with_triples(&[("Horton Park", "located in", "Saint Paul")]),
        CorpusRecord::new(
            "toy-hertfordshire",
            Some("Hertfordshire"),
            "Hertfordshire is a county in the east of England.",
        )
        .with_triples(&[("Hertfordshire", "is a county in", "England")]),
    ]
}

pub fn toy_queries() -> Vec<EvalQuery> {
    vec![
        EvalQuery::new("toy-q1", "In what city was I.P. Paul born?", &["Thrissur"], &["toy-paul", "toy-thrissur"]),
        EvalQuery::new(
            "toy-q2",
            "What county is Erik Hort's birthplace a part of?",
            &["Rockland County"],
            &["toy-hort", "toy-montebello"],
        ),
    ]
}

pub fn toy_fixture() -> QaFixture {
    QaFixture {
        corpus: toy_corpus(),
        queries: toy_queries(),
    }
}

/// A retrieved list, its gold set and the recall@5 it should score.
#[derive(Clone, Debug)]
pub struct RecallCase {
    pub retrieved: Vec<String>,
    pub gold: Vec<String>,
    pub expected_recall_at_5: f64,
}

/// Two partial-recall cases: four gold passages with three retrieved, and two
/// gold passages with one retrieved.
pub fn recall_cases() -> Vec<RecallCase> {
    let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        RecallCase {
            retrieved: s(&[
                "Bernhard Lichtenberg",
                "Mary, mother of Jesus",
                "Ambroise-Marie Carré",
                "Reformation",
                "Henry Scott Holland",
            ]),
            gold: s(&["Mary, mother of Jesus", "Reformation", "Wittenberg (district)", "Bernhard Lichtenberg"]),
            expected_recall_at_5: 0.75,
        },
        RecallCase {
            retrieved: s(&[
                "Philippe I, Duke of Orléans",
                "Louise Élisabeth d'Orléans",
                "Philip III of Spain",
                "Anna of Lorraine",
                "Louis Philippe I",
            ]),
            gold: s(&["Philippe I, Duke of Orléans", "Leonora Dori"]),
            expected_recall_at_5: 0.5,
        },
    ]
}

const ONSETS: &[&str] = &[
    "b", "br", "c", "d", "dr", "f", "g", "gr", "h", "j", "k", "kl", "l", "m", "n", "p", "qu", "r", "s", "st", "t",
    "tr", "v", "w", "z",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u", "ae", "ei", "ou", "ia"];
const CODAS: &[&str] = &["", "", "n", "r", "l", "s", "th", "m", "x", "nd"];

/// Seeded generator of pronounceable, never-repeating words.
pub struct NameGen {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl NameGen {
    pub fn new(seed: u64) -> Self {
        NameGen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: HashSet::new(),
        }
    }

    /// Reserves words so they are never generated.
    pub fn reserve(&mut self, words: &[&str]) {
        self.used.extend(words.iter().map(|w| w.to_lowercase()));
    }

    pub fn word(&mut self) -> String {
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut self.rng).unwrap());
                w.push_str(NUCLEI.choose(&mut self.rng).unwrap());
            }
            w.push_str(CODAS.choose(&mut self.rng).unwrap());
            if w.len() >= 4 && self.used.insert(w.clone()) {
                let mut c = w.chars();
                let first = c.next().unwrap().to_ascii_uppercase();
                return std::iter::once(first).chain(c).collect();
            }
        }
    }

    pub fn person(&mut self) -> String {
        format!("{} {}", self.word(), self.word())
    }

    pub fn place(&mut self) -> String {
        self.word()
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

const QUERY_WORDS: &[&str] = &["what", "province", "contains", "the", "birthplace", "of", "born", "lies", "within"];

/// Two-hop chains `A was born in B` / `B lies within C` plus unrelated
/// distractor passages of the same shapes.
///
/// Each query names only `A`, so the second passage of its chain shares no
/// token with the query and is reachable only through the graph.
pub fn multi_hop_suite(chains: usize, distractors: usize, seed: u64) -> QaFixture {
    let mut names = NameGen::new(seed);
    names.reserve(QUERY_WORDS);
    let mut corpus = Vec::with_capacity(2 * chains + distractors);
    let mut queries = Vec::with_capacity(chains);
    for i in 0..chains {
        let (a, b, c) = (names.person(), names.place(), names.place());
        let first = format!("mh{i:03}-a");
        let second = format!("mh{i:03}-b");
        corpus.push(
            CorpusRecord::new(&first, Some(&a), format!("{a} was born in {b}."))
                .with_triples(&[(&a, "was born in", &b)]),
        );
        corpus.push(
            CorpusRecord::new(&second, Some(&b), format!("{b} lies within {c}."))
                .with_triples(&[(&b, "lies within", &c)]),
        );
        queries.push(EvalQuery::new(
            &format!("mh{i:03}"),
            &format!("What province contains the birthplace of {a}?"),
            &[&c],
            &[&first, &second],
        ));
    }
    for j in 0..distractors {
        let id = format!("dx{j:04}");
        let record = if j % 2 == 0 {
            let (x, y) = (names.person(), names.place());
            CorpusRecord::new(&id, Some(&x), format!("{x} was born in {y}.")).with_triples(&[(&x, "was born in", &y)])
        } else {
            let (y, z) = (names.place(), names.place());
            CorpusRecord::new(&id, Some(&y), format!("{y} lies within {z}.")).with_triples(&[(&y, "lies within", &z)])
        };
        corpus.push(record);
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(names.rng());
    let corpus = order.into_iter().map(|i| corpus[i].clone()).collect();
    QaFixture { corpus, queries }
}

/// Single-hop factoid corpus split into `segments` equal segments. Segment 1
/// holds every gold passage plus unrelated facts; later segments add
/// confusers that mention a segment-1 country without naming its capital.
pub fn expansion_fixture(queries: usize, per_segment: usize, segments: usize, seed: u64) -> QaFixture {
    assert!(per_segment >= queries, "segment 1 must hold every gold passage");
    let mut names = NameGen::new(seed);
    names.reserve(&["which", "country", "capital", "is", "city", "port", "largest"]);
    let mut corpus = Vec::with_capacity(per_segment * segments);
    let mut qs = Vec::with_capacity(queries);
    let mut countries = Vec::with_capacity(queries);
    let capital = |city: &str, country: &str, id: String| {
        CorpusRecord::new(&id, Some(city), format!("{city} is the capital of {country}."))
            .with_triples(&[(city, "is the capital of", country)])
    };
    for i in 0..queries {
        let id = format!("nq{i:03}");
        let (city, country) = (names.place(), names.place());
        qs.push(EvalQuery::new(&id, &format!("Which city is the capital of {country}?"), &[&city], &[&id]));
        corpus.push(capital(&city, &country, id));
        countries.push(country);
    }
    let mut filler = 0;
    while corpus.len() < per_segment {
        let (city, country) = (names.place(), names.place());
        corpus.push(capital(&city, &country, format!("fill{filler:04}")));
        filler += 1;
    }
    while corpus.len() < per_segment * segments {
        let id = format!("fill{filler:04}");
        let port = names.place();
        let country = countries[names.rng().gen_range(0..countries.len())].clone();
        corpus.push(
            CorpusRecord::new(&id, Some(&port), format!("{port} is the largest port city of {country}."))
                .with_triples(&[(&port, "is the largest port city of", &country)]),
        );
        filler += 1;
    }
    QaFixture { corpus, queries: qs }
}

/// Splits `corpus` into `segments` contiguous equal parts (the last absorbs any remainder).
pub fn split_segments(corpus: &[CorpusRecord], segments: usize) -> Vec<Vec<CorpusRecord>> {
    let size = corpus.len() / segments.max(1);
    (0..segments)
        .map(|s| {
            let end = if s + 1 == segments { corpus.len() } else { (s + 1) * size };
            corpus[s * size..end].to_vec()
        })
        .collect()
}

const RELATIONS: &[&str] = &[
    "was born in",
    "lies within",
    "works for",
    "married",
    "founded",
    "studied at",
    "plays for",
    "borders",
    "is part of",
    "manages",
];

/// Random passages over a shared entity pool, `sentences` facts each, in
/// `X <relation> Y.` form. With `annotate` the triples are attached as
/// fixtures; otherwise the rule-based extractor recovers them from the text.
pub fn random_corpus(passages: usize, sentences: usize, entity_pool: usize, annotate: bool, seed: u64) -> Vec<CorpusRecord> {
    let mut names = NameGen::new(seed);
    let reserved: Vec<&str> = RELATIONS.iter().flat_map(|r| r.split(' ')).collect();
    names.reserve(&reserved);
    let entities: Vec<String> = (0..entity_pool)
        .map(|i| if i % 2 == 0 { names.person() } else { names.place() })
        .collect();
    let rng = names.rng();
    (0..passages)
        .map(|p| {
            let mut text = Vec::with_capacity(sentences);
            let mut triples = Vec::with_capacity(sentences);
            for _ in 0..sentences {
                let s = &entities[rng.gen_range(0..entities.len())];
                let mut o = &entities[rng.gen_range(0..entities.len())];
                while o == s {
                    o = &entities[rng.gen_range(0..entities.len())];
                }
                let r = RELATIONS[rng.gen_range(0..RELATIONS.len())];
                text.push(format!("{s} {r} {o}."));
                triples.push((s.clone(), r, o.clone()));
            }
            let mut record = CorpusRecord::new(format!("rc{p:05}"), Some(&triples[0].0), text.join(" "));
            if annotate {
                let refs: Vec<(&str, &str, &str)> = triples.iter().map(|(s, r, o)| (s.as_str(), *r, o.as_str())).collect();
                record = record.with_triples(&refs);
            }
            record
        })
        .collect()
}

/// Appends distractor triples drawn from `pool` so they make up `fraction`
/// of the returned list. Each distractor carries the best candidate score.
pub fn inject_distractors(candidates: &[ScoredTriple], pool: &[TripleId], fraction: f64, seed: u64) -> Vec<ScoredTriple> {
    let mut out = candidates.to_vec();
    if candidates.is_empty() || !(fraction > 0.0 && fraction < 1.0) {
        return out;
    }
    let extra = (fraction * candidates.len() as f64 / (1.0 - fraction)).round() as usize;
    let present: HashSet<TripleId> = candidates.iter().map(|c| c.triple).collect();
    let mut choices: Vec<TripleId> = pool.iter().copied().filter(|t| !present.contains(t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    choices.shuffle(&mut rng);
    let top = candidates.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
    out.extend(choices.into_iter().take(extra).map(|triple| ScoredTriple { triple, score: top }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokens;

    #[test]
    fn names_are_unique_and_deterministic() {
        let mut a = NameGen::new(7);
        let mut b = NameGen::new(7);
        let xs: Vec<String> = (0..500).map(|_| a.word()).collect();
        let ys: Vec<String> = (0..500).map(|_| b.word()).collect();
        assert_eq!(xs, ys);
        assert_eq!(xs.iter().collect::<HashSet<_>>().len(), 500);
    }

    #[test]
    fn bridge_passages_share_no_token_with_queries() {
        let f = multi_hop_suite(50, 500, 1);
        assert_eq!(f.corpus.len(), 600);
        for q in &f.queries {
            let qt: HashSet<String> = tokens(&q.question).into_iter().collect();
            let bridge = f.corpus.iter().find(|c| c.doc_id == q.gold_passage_ids[1]).unwrap();
            let bt: HashSet<String> = tokens(&bridge.embedding_text()).into_iter().collect();
            assert!(qt.is_disjoint(&bt), "{}", q.id);
        }
    }

    #[test]
    fn expansion_gold_in_first_segment() {
        let f = expansion_fixture(40, 100, 4, 3);
        let segs = split_segments(&f.corpus, 4);
        assert_eq!(segs.len(), 4);
        assert!(segs.iter().all(|s| s.len() == 100));
        let first: HashSet<&str> = segs[0].iter().map(|c| c.doc_id.as_str()).collect();
        assert!(f.queries.iter().all(|q| q.gold_passage_ids.iter().all(|g| first.contains(g.as_str()))));
    }

    #[test]
    fn injection_fraction() {
        let c: Vec<ScoredTriple> = (0..7).map(|i| ScoredTriple { triple: TripleId(i), score: 0.5 }).collect();
        let pool: Vec<TripleId> = (0..100).map(TripleId).collect();
        let out = inject_distractors(&c, &pool, 0.3, 1);
        assert_eq!(out.len(), 10);
        assert_eq!(&out[..7], &c[..]);
    }

    #[test]
    fn random_corpus_rule_extraction_matches_annotation() {
        use crate::extract::MockExtractor;
        let plain = random_corpus(20, 4, 50, false, 9);
        let annotated = random_corpus(20, 4, 50, true, 9);
        for (p, a) in plain.iter().zip(&annotated) {
            assert_eq!(MockExtractor::rule_based(&p.text), a.fixture_triples.clone().unwrap());
        }
    }
}
