//! Personalized PageRank over the frozen graph.
//!
//! The walk follows an edge with probability `damping` and restarts into the
//! reset distribution otherwise. Transitions are proportional to edge weight
//! (row-normalized). Nodes with no edges send their mass back to the reset
//! distribution, so total mass is conserved.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::Csr;
use crate::reset::ResetVector;

pub const DEFAULT_DAMPING: f64 = 0.5;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITERATIONS: usize = 1000;
pub const ORACLE_NODE_LIMIT: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PprParams {
    pub damping: f64,
    /// L1 change between iterates at which the solve stops.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PprParams {
    fn default() -> Self {
        PprParams {
            damping: DEFAULT_DAMPING,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl PprParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Validation(format!("damping {} outside (0, 1)", self.damping)));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Validation(format!("tolerance {} must be positive", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Validation("max_iterations must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PprScores {
    /// Probability mass per node, indexed by node id.
    pub scores: Vec<f64>,
    pub iterations: usize,
    /// L1 change of the final iteration.
    pub residual: f64,
    /// False when `max_iterations` was reached before the tolerance.
    pub converged: bool,
}

impl PprScores {
    pub fn total_mass(&self) -> f64 {
        self.scores.iter().sum()
    }
}

fn dense_reset(n: usize, reset: &ResetVector) -> Result<Vec<f64>> {
    let mut r = vec![0.0; n];
    for &(node, p) in reset.entries() {
        let slot = r
            .get_mut(node.index())
            .ok_or_else(|| Error::Validation(format!("reset entry {node} outside graph of {n} nodes")))?;
        *slot += p;
    }
    Ok(r)
}

/// Power iteration to the fixed point `p = (1-d) r + d (Wᵀ p + m_dangling r)`.
pub fn run_ppr(adjacency: &Csr, reset: &ResetVector, params: &PprParams) -> Result<PprScores> {
    params.validate()?;
    reset.validate()?;
    let n = adjacency.node_count();
    let r = dense_reset(n, reset)?;
    let d = params.damping;

    let inv_degree: Vec<f64> = (0..n)
        .map(|u| {
            let deg = adjacency.weighted_degree(u);
            if deg > 0.0 {
                1.0 / deg
            } else {
                0.0
            }
        })
        .collect();
    let dangling: Vec<usize> = (0..n).filter(|&u| inv_degree[u] == 0.0).collect();

    let mut p = r.clone();
    let mut next = vec![0.0; n];
    let mut out_share = vec![0.0; n];
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    while iterations < params.max_iterations {
        iterations += 1;
        let dangling_mass: f64 = dangling.iter().map(|&u| p[u]).sum();
        for u in 0..n {
            out_share[u] = p[u] * inv_degree[u];
        }
        let mut diff = 0.0;
        for v in 0..n {
            let (targets, weights) = adjacency.row(v);
            let mut inflow = 0.0;
            for (&u, &w) in targets.iter().zip(weights) {
                inflow += w * out_share[u as usize];
            }
            let value = (1.0 - d) * r[v] + d * (inflow + dangling_mass * r[v]);
            diff += (value - p[v]).abs();
            next[v] = value;
        }
        std::mem::swap(&mut p, &mut next);
        residual = diff;
        if diff <= params.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        tracing::warn!(iterations, residual, "personalized pagerank did not converge");
    }
    Ok(PprScores {
        scores: p,
        iterations,
        residual,
        converged,
    })
}

/// Exact stationary vector by dense LU solve of `(I - d M) p = (1-d) r`,
/// where column `u` of `M` is the transition row of `u` (or `r` when `u` is
/// dangling). Refuses graphs above [`ORACLE_NODE_LIMIT`] nodes.
pub fn dense_ppr_oracle(adjacency: &Csr, reset: &ResetVector, damping: f64) -> Result<Vec<f64>> {
    let n = adjacency.node_count();
    if n > ORACLE_NODE_LIMIT {
        return Err(Error::OracleTooLarge {
            nodes: n,
            limit: ORACLE_NODE_LIMIT,
        });
    }
    if !(damping > 0.0 && damping < 1.0) {
        return Err(Error::Validation(format!("damping {damping} outside (0, 1)")));
    }
    reset.validate()?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let r = dense_reset(n, reset)?;
    let mut a = DMatrix::<f64>::identity(n, n);
    for u in 0..n {
        let (targets, weights) = adjacency.row(u);
        let deg: f64 = weights.iter().sum();
        if deg > 0.0 {
            for (&v, &w) in targets.iter().zip(weights) {
                a[(v as usize, u)] -= damping * w / deg;
            }
        } else {
            for v in 0..n {
                a[(v, u)] -= damping * r[v];
            }
        }
    }
    let b = DVector::from_iterator(n, r.iter().map(|&x| (1.0 - damping) * x));
    let solution = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Validation("singular PPR system".into()))?;
    Ok(solution.iter().copied().collect())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{NodeId, OpenKG};
    use proptest::prelude::*;

    fn path_graph() -> (Csr, Vec<NodeId>) {
        let mut kg = OpenKG::default();
        let doc = kg.add_passage("d", None, "t").unwrap();
        kg.add_triple("a", "r", "b", doc).unwrap();
        kg.add_triple("b", "r", "c", doc).unwrap();
        let ids: Vec<NodeId> = ["a", "b", "c"].iter().map(|x| kg.find_phrase(x).unwrap()).collect();
        let phrase_only = Csr::build(&kg, |e| e.kind == crate::kg::EdgeKind::Relation);
        (phrase_only, ids)
    }

    #[test]
    fn single_node_keeps_all_mass() {
        let mut kg = OpenKG::default();
        let n = kg.upsert_phrase("solo").unwrap();
        let csr = Csr::build(&kg, |_| true);
        let reset = ResetVector::from_scores(&[(n, 3.0)]).unwrap();
        let out = run_ppr(&csr, &reset, &PprParams::default()).unwrap();
        assert_eq!(out.scores, vec![1.0]);
        assert!(out.converged);
    }

    #[test]
    fn two_node_symmetry() {
        let mut kg = OpenKG::default();
        let d = kg.add_passage("d", None, "t").unwrap();
        kg.add_triple("x", "r", "y", d).unwrap();
        let csr = Csr::build(&kg, |e| e.kind == crate::kg::EdgeKind::Relation);
        let (x, y) = (kg.find_phrase("x").unwrap(), kg.find_phrase("y").unwrap());
        for damping in [0.1, 0.5, 0.85] {
            let reset = ResetVector::from_scores(&[(x, 1.0), (y, 1.0)]).unwrap();
            let params = PprParams { damping, ..PprParams::default() };
            let out = run_ppr(&csr, &reset, &params).unwrap();
            assert!((out.scores[x.index()] - 0.5).abs() < 1e-12);
            assert!((out.scores[y.index()] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn three_node_path_matches_closed_form() {
        // A-B-C, d = 1/2, r = e_A. Solving p = r/2 + Wᵀp/2 by hand:
        // pA = 1/2 + pB/4, pB = pA/2 + pC/2, pC = pB/4  =>  pA = 7/12, pB = 1/3, pC = 1/12
        let (csr, ids) = path_graph();
        let reset = ResetVector::from_scores(&[(ids[0], 1.0)]).unwrap();
        let out = run_ppr(&csr, &reset, &PprParams::default()).unwrap();
        let oracle = dense_ppr_oracle(&csr, &reset, 0.5).unwrap();
        let expected = [(ids[0], 7.0 / 12.0), (ids[1], 1.0 / 3.0), (ids[2], 1.0 / 12.0)];
        for (id, want) in expected {
            assert!((oracle[id.index()] - want).abs() < 1e-12);
            assert!((out.scores[id.index()] - want).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_edge_graph_returns_reset() {
        let mut kg = OpenKG::default();
        let ids: Vec<NodeId> = (0..4).map(|i| kg.upsert_phrase(&format!("n{i}")).unwrap()).collect();
        let csr = Csr::build(&kg, |_| true);
        let reset = ResetVector::from_scores(&[(ids[0], 1.0), (ids[2], 3.0)]).unwrap();
        let oracle = dense_ppr_oracle(&csr, &reset, 0.5).unwrap();
        let iter = run_ppr(&csr, &reset, &PprParams::default()).unwrap();
        let want = [0.25, 0.0, 0.75, 0.0];
        for i in 0..4 {
            assert!((oracle[i] - want[i]).abs() < 1e-12);
            assert!((iter.scores[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn non_convergence_is_flagged() {
        let (csr, ids) = path_graph();
        let reset = ResetVector::from_scores(&[(ids[0], 1.0)]).unwrap();
        let params = PprParams {
            max_iterations: 2,
            ..PprParams::default()
        };
        let out = run_ppr(&csr, &reset, &params).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
    }

    #[test]
    fn parameter_validation() {
        let (csr, ids) = path_graph();
        let reset = ResetVector::from_scores(&[(ids[0], 1.0)]).unwrap();
        for bad in [0.0, 1.0, -0.2] {
            let p = PprParams { damping: bad, ..PprParams::default() };
            assert!(run_ppr(&csr, &reset, &p).is_err());
        }
        let p = PprParams { tolerance: 0.0, ..PprParams::default() };
        assert!(run_ppr(&csr, &reset, &p).is_err());
    }

    #[test]
    fn oracle_refuses_large_graphs() {
        let mut kg = OpenKG::default();
        for i in 0..=ORACLE_NODE_LIMIT {
            kg.upsert_phrase(&format!("n{i}")).unwrap();
        }
        let csr = Csr::build(&kg, |_| true);
        let reset = ResetVector::from_scores(&[(NodeId(0), 1.0)]).unwrap();
        assert!(matches!(dense_ppr_oracle(&csr, &reset, 0.5), Err(Error::OracleTooLarge { .. })));
    }

    /// Random weighted graph on `n` phrase nodes with some isolated nodes.
    fn random_graph(n: usize, edges: &[(usize, usize, u8)], connected: bool) -> OpenKG {
        let mut kg = OpenKG::new(crate::kg::KgConfig {
            synonym_threshold: 0.01,
            collapse_relation_edges: true,
        });
        let ids: Vec<NodeId> = (0..n).map(|i| kg.upsert_phrase(&format!("n{i}")).unwrap()).collect();
        for &(a, b, w) in edges {
            let (a, b) = (a % n, b % n);
            if a != b {
                kg.add_synonym_edge(ids[a], ids[b], 0.01 + w as f64 / 255.0 * 0.99).unwrap();
            }
        }
        if connected {
            for w in ids.windows(2) {
                kg.add_synonym_edge(w[0], w[1], 0.5).unwrap();
            }
        }
        kg
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(120))]

        #[test]
        fn iterative_matches_dense_oracle(
            n in 1usize..50,
            edges in proptest::collection::vec((0usize..50, 0usize..50, 0u8..=255), 0..150),
            seeds in proptest::collection::vec((0usize..50, 1u32..1000), 1..8),
        ) {
            let kg = random_graph(n, &edges, false);
            let csr = Csr::build(&kg, |_| true);
            let raw: Vec<(NodeId, f64)> = seeds.iter().map(|&(i, s)| (NodeId((i % n) as u32), s as f64)).collect();
            let reset = ResetVector::from_scores(&raw).unwrap();
            let it = run_ppr(&csr, &reset, &PprParams::default()).unwrap();
            let oracle = dense_ppr_oracle(&csr, &reset, 0.5).unwrap();
            prop_assert!(max_abs_diff(&it.scores, &oracle) < 1e-8);
            prop_assert!((it.total_mass() - 1.0).abs() <= 10.0 * 1e-8);
            prop_assert!(it.scores.iter().all(|&x| x >= 0.0));

            // scaling raw seed scores leaves the result unchanged
            let scaled: Vec<(NodeId, f64)> = raw.iter().map(|&(id, s)| (id, s * 10.0)).collect();
            let it2 = run_ppr(&csr, &ResetVector::from_scores(&scaled).unwrap(), &PprParams::default()).unwrap();
            prop_assert!(max_abs_diff(&it.scores, &it2.scores) < 1e-15);
        }

        #[test]
        fn adding_reset_mass_never_lowers_a_node(
            n in 2usize..30,
            edges in proptest::collection::vec((0usize..30, 0usize..30, 0u8..=255), 1..80),
            seeds in proptest::collection::vec((0usize..30, 1u32..1000), 1..6),
            target in 0usize..30,
            extra in 1u32..1000,
        ) {
            let kg = random_graph(n, &edges, true);
            let csr = Csr::build(&kg, |_| true);
            let target = NodeId((target % n) as u32);
            let raw: Vec<(NodeId, f64)> = seeds.iter().map(|&(i, s)| (NodeId((i % n) as u32), s as f64)).collect();
            let mut boosted = raw.clone();
            boosted.push((target, extra as f64));
            let before = dense_ppr_oracle(&csr, &ResetVector::from_scores(&raw).unwrap(), 0.5).unwrap();
            let after = dense_ppr_oracle(&csr, &ResetVector::from_scores(&boosted).unwrap(), 0.5).unwrap();
            prop_assert!(after[target.index()] >= before[target.index()] - 1e-12);
        }
    }
}
