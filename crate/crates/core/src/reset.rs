//! Seed selection and reset probabilities for the PPR walk.
//!
//! Phrase seeds come from the filtered triples: each phrase scores the mean
//! query similarity of the kept triples it appears in, and only the best
//! `max_phrase_seeds` survive. Every passage is a seed with score
//! `max(similarity, 0) * weight_factor`. The concatenated scores are
//! normalized to sum to one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{NodeId, OpenKG};
use crate::linker::FilteredTripleSet;

pub const DEFAULT_PASSAGE_WEIGHT: f64 = 0.05;
pub const DEFAULT_MAX_PHRASE_SEEDS: usize = 5;
const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    Phrase,
    Passage,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub node: NodeId,
    pub kind: SeedKind,
    /// Score before normalization.
    pub raw_score: f64,
    pub probability: f64,
}

/// Sparse restart distribution; entries sorted by node id.
#[derive(Clone, Debug, PartialEq)]
pub struct ResetVector {
    entries: Vec<(NodeId, f64)>,
    seeds: Vec<Seed>,
    weight_factor: f64,
    phrase_seed_count: usize,
}

impl ResetVector {
    /// Normalizes arbitrary non-negative scores (duplicates are summed, zeros dropped).
    pub fn from_scores(raw: &[(NodeId, f64)]) -> Result<Self> {
        let mut merged: BTreeMap<NodeId, f64> = BTreeMap::new();
        for &(node, s) in raw {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::Validation(format!("reset score {s} for {node} must be finite and >= 0")));
            }
            *merged.entry(node).or_default() += s;
        }
        let total: f64 = merged.values().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateReset);
        }
        let entries = merged
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(n, s)| (n, s / total))
            .collect();
        Ok(ResetVector {
            entries,
            seeds: Vec::new(),
            weight_factor: 0.0,
            phrase_seed_count: 0,
        })
    }

    pub fn entries(&self) -> &[(NodeId, f64)] {
        &self.entries
    }

    /// Seeds in selection order: phrases by descending score, then passages by id.
    pub fn seeds(&self) -> &[Seed] {
        &self.seeds
    }

    pub fn weight_factor(&self) -> f64 {
        self.weight_factor
    }

    pub fn phrase_seed_count(&self) -> usize {
        self.phrase_seed_count
    }

    pub fn probability(&self, node: NodeId) -> f64 {
        self.entries
            .binary_search_by_key(&node, |&(n, _)| n)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|&(_, p)| p).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::DegenerateReset);
        }
        if self.entries.iter().any(|&(_, p)| !(p >= 0.0)) {
            return Err(Error::Validation("negative reset probability".into()));
        }
        let sum = self.sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Validation(format!("reset vector sums to {sum}")));
        }
        Ok(())
    }
}

/// Mean similarity of the kept triples each phrase appears in (subject or
/// object), ordered by node id.
pub fn phrase_scores_from_triples(kg: &OpenKG, filtered: &FilteredTripleSet) -> Vec<(NodeId, f64)> {
    let mut acc: BTreeMap<NodeId, (f64, usize)> = BTreeMap::new();
    for st in &filtered.kept {
        let Some(t) = kg.triple(st.triple) else { continue };
        let mut phrases = vec![t.subject];
        if t.object != t.subject {
            phrases.push(t.object);
        }
        for p in phrases {
            let e = acc.entry(p).or_default();
            e.0 += st.score;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(p, (sum, n))| (p, sum / n as f64)).collect()
}

/// Builds the reset vector from per-phrase scores (any linking mode) and
/// per-passage similarities.
pub fn reset_from_seed_scores(
    phrase_scores: &[(NodeId, f64)],
    passage_scores: &[(NodeId, f64)],
    weight_factor: f64,
    max_phrase_seeds: usize,
) -> Result<ResetVector> {
    if !(weight_factor > 0.0) {
        return Err(Error::Validation(format!("passage weight factor {weight_factor} must be positive")));
    }
    if max_phrase_seeds == 0 {
        return Err(Error::Validation("max_phrase_seeds must be at least 1".into()));
    }
    let mut phrases: Vec<(NodeId, f64)> = phrase_scores.iter().copied().filter(|&(_, s)| s > 0.0).collect();
    phrases.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    phrases.dedup_by_key(|x| x.0);
    phrases.truncate(max_phrase_seeds);

    let mut passages: Vec<(NodeId, f64)> = passage_scores
        .iter()
        .map(|&(n, s)| (n, s.max(0.0) * weight_factor))
        .filter(|&(_, s)| s > 0.0)
        .collect();
    passages.sort_by_key(|x| x.0);

    let total: f64 = phrases.iter().chain(&passages).map(|x| x.1).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateReset);
    }
    let mut seeds: Vec<Seed> = Vec::with_capacity(phrases.len() + passages.len());
    for &(node, raw) in &phrases {
        seeds.push(Seed {
            node,
            kind: SeedKind::Phrase,
            raw_score: raw,
            probability: raw / total,
        });
    }
    for &(node, raw) in &passages {
        seeds.push(Seed {
            node,
            kind: SeedKind::Passage,
            raw_score: raw,
            probability: raw / total,
        });
    }
    let mut entries: Vec<(NodeId, f64)> = seeds.iter().map(|s| (s.node, s.probability)).collect();
    entries.sort_by_key(|x| x.0);
    if entries.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Validation("a node is both a phrase and a passage seed".into()));
    }
    Ok(ResetVector {
        entries,
        seeds,
        weight_factor,
        phrase_seed_count: phrases.len(),
    })
}

pub fn build_reset_vector(
    kg: &OpenKG,
    filtered: &FilteredTripleSet,
    passage_scores: &[(NodeId, f64)],
    weight_factor: f64,
    max_phrase_seeds: usize,
) -> Result<ResetVector> {
    let phrase_scores = phrase_scores_from_triples(kg, filtered);
    reset_from_seed_scores(&phrase_scores, passage_scores, weight_factor, max_phrase_seeds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::TripleId;
    use crate::linker::{FilterMode, ScoredTriple};

    fn kept(triples: &[(u32, f64)]) -> FilteredTripleSet {
        FilteredTripleSet {
            kept: triples.iter().map(|&(t, s)| ScoredTriple { triple: TripleId(t), score: s }).collect(),
            dropped: Vec::new(),
            hallucinated: 0,
            mode: FilterMode::KeepAll,
            failed: false,
        }
    }

    #[test]
    fn phrase_score_is_mean_of_kept_triples() {
        let mut kg = OpenKG::default();
        let d = kg.add_passage("d", None, "t").unwrap();
        kg.add_triple("P", "r1", "Q", d).unwrap();
        kg.add_triple("R", "r2", "P", d).unwrap();
        let p = kg.find_phrase("P").unwrap();
        let scores = phrase_scores_from_triples(&kg, &kept(&[(0, 0.9), (1, 0.7)]));
        let sp = scores.iter().find(|x| x.0 == p).unwrap().1;
        assert!((sp - 0.8).abs() < 1e-12);

        let reset = build_reset_vector(&kg, &kept(&[(0, 0.9), (1, 0.7)]), &[(d, 0.6)], 0.05, 5).unwrap();
        let seed = reset.seeds().iter().find(|s| s.node == p).unwrap();
        assert!((seed.raw_score - 0.8).abs() < 1e-12);
        let ps = reset.seeds().iter().find(|s| s.node == d).unwrap();
        assert!((ps.raw_score - 0.03).abs() < 1e-12);
        assert!((reset.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn at_most_five_phrase_seeds() {
        let phrases: Vec<(NodeId, f64)> = (0..7).map(|i| (NodeId(i), 0.9 - i as f64 * 0.1)).collect();
        let reset = reset_from_seed_scores(&phrases, &[(NodeId(10), 0.5)], 0.05, 5).unwrap();
        assert_eq!(reset.phrase_seed_count(), 5);
        let kept: Vec<u32> = reset.seeds().iter().filter(|s| s.kind == SeedKind::Phrase).map(|s| s.node.0).collect();
        assert_eq!(kept, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn negative_passage_similarity_is_clipped() {
        let reset = reset_from_seed_scores(&[(NodeId(0), 1.0)], &[(NodeId(1), -0.4), (NodeId(2), 0.2)], 0.05, 5).unwrap();
        assert_eq!(reset.probability(NodeId(1)), 0.0);
        assert!((reset.probability(NodeId(2)) - 0.01 / 1.01).abs() < 1e-15);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let e = reset_from_seed_scores(&[(NodeId(0), 0.0)], &[(NodeId(1), -0.3)], 0.05, 5);
        assert!(matches!(e, Err(Error::DegenerateReset)));
        assert!(matches!(ResetVector::from_scores(&[]), Err(Error::DegenerateReset)));
        assert!(reset_from_seed_scores(&[(NodeId(0), 1.0)], &[], 0.0, 5).is_err());
        assert!(reset_from_seed_scores(&[(NodeId(0), 1.0)], &[], 0.05, 0).is_err());
    }

    #[test]
    fn scale_invariance_of_normalization() {
        let phrases = [(NodeId(0), 0.3), (NodeId(3), 0.9)];
        let passages = [(NodeId(1), 0.6), (NodeId(2), 0.1)];
        let a = reset_from_seed_scores(&phrases, &passages, 0.05, 5).unwrap();
        let scaled_p: Vec<_> = phrases.iter().map(|&(n, s)| (n, s * 10.0)).collect();
        let scaled_q: Vec<_> = passages.iter().map(|&(n, s)| (n, s * 10.0)).collect();
        let b = reset_from_seed_scores(&scaled_p, &scaled_q, 0.05, 5).unwrap();
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert_eq!(x.0, y.0);
            assert!((x.1 - y.1).abs() < 1e-15);
        }
    }
}
