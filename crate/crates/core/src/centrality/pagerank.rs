//! Damped transition matrix and its stationary vector.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::graph::WeightedDigraph;

pub const DEFAULT_DAMPING: f64 = 0.85;

#[derive(Debug, Error, PartialEq)]
pub enum PageRankError {
    #[error("graph is empty")]
    Empty,
    #[error("damping factor {0} outside (0, 1)")]
    Damping(f64),
    #[error("power iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
}

/// Row-stochastic `(1-d)/N + d * W/out_strength`; dangling rows are uniform.
#[derive(Debug, Clone, PartialEq)]
pub struct GoogleMatrix {
    damping: f64,
    rows: Vec<Vec<f64>>,
}

impl GoogleMatrix {
    pub fn new(g: &WeightedDigraph, damping: f64) -> Result<Self, PageRankError> {
        check_args(g, damping)?;
        let n = g.node_count();
        let teleport = (1.0 - damping) / n as f64;
        let rows = (0..n)
            .map(|u| {
                let (_, out) = g.strengths_at(u);
                if out == 0 {
                    return vec![1.0 / n as f64; n];
                }
                let mut row = vec![teleport; n];
                for &k in g.out_edges(u) {
                    let e = g.edges()[k];
                    row[e.dst] += damping * e.weight as f64 / out as f64;
                }
                row
            })
            .collect();
        Ok(GoogleMatrix { damping, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn entry(&self, u: usize, v: usize) -> f64 {
        self.rows[u][v]
    }

    /// `p · G`.
    pub fn left_multiply(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (pu, row) in p.iter().zip(&self.rows) {
            for (o, g) in out.iter_mut().zip(row) {
                *o += pu * g;
            }
        }
        out
    }
}

pub fn google_matrix(g: &WeightedDigraph, damping: f64) -> Result<GoogleMatrix, PageRankError> {
    GoogleMatrix::new(g, damping)
}

fn check_args(g: &WeightedDigraph, damping: f64) -> Result<(), PageRankError> {
    if g.is_empty() {
        return Err(PageRankError::Empty);
    }
    if !(damping > 0.0 && damping < 1.0) {
        return Err(PageRankError::Damping(damping));
    }
    Ok(())
}

/// One application of the damped walk without materializing the matrix.
fn step(g: &WeightedDigraph, out: &[u64], damping: f64, p: &[f64]) -> Vec<f64> {
    let n = p.len();
    let dangling: f64 = p.iter().zip(out).filter(|(_, &o)| o == 0).map(|(x, _)| x).sum();
    let linked: f64 = p.iter().zip(out).filter(|(_, &o)| o > 0).map(|(x, _)| x).sum();
    let base = (1.0 - damping) * linked / n as f64 + dangling / n as f64;
    let mut next = vec![base; n];
    for e in g.edges() {
        next[e.dst] += damping * p[e.src] * e.weight as f64 / out[e.src] as f64;
    }
    next
}

/// Power iteration from the uniform vector. Stops once `‖pG − p‖₁ ≤ tol` and
/// returns that `p`.
pub fn pagerank_indexed(
    g: &WeightedDigraph,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>, PageRankError> {
    check_args(g, damping)?;
    let n = g.node_count();
    let out: Vec<u64> = (0..n).map(|u| g.strengths_at(u).1).collect();
    let mut p = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter {
        let next = step(g, &out, damping, &p);
        residual = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        if residual <= tol {
            return Ok(p);
        }
        p = next;
    }
    Err(PageRankError::NotConverged { iterations: max_iter, residual })
}

pub fn pagerank(
    g: &WeightedDigraph,
    damping: f64,
    tol: f64,
    max_iter: usize,
) -> Result<BTreeMap<String, f64>, PageRankError> {
    let p = pagerank_indexed(g, damping, tol, max_iter)?;
    Ok(g.nodes().iter().map(|n| n.code.clone()).zip(p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::digraph;
    use airhold_oracles::{dense_google_matrix, left_multiply};
    use proptest::prelude::*;

    #[test]
    fn single_out_edge() {
        let g = digraph(&["a", "b"], &[("a", "b", 1)]);
        let m = google_matrix(&g, 0.85).unwrap();
        assert!((m.entry(0, 1) - 0.925).abs() < 1e-15);
        // b is dangling
        assert_eq!(m.rows()[1], vec![0.5, 0.5]);
    }

    #[test]
    fn weighted_row() {
        let g = digraph(&["a", "b", "c"], &[("a", "b", 1), ("a", "c", 3)]);
        let m = google_matrix(&g, 0.85).unwrap();
        assert!((m.entry(0, 2) - 0.6875).abs() < 1e-15);
        assert!((m.entry(0, 1) - (0.05 + 0.85 * 0.25)).abs() < 1e-15);
    }

    #[test]
    fn argument_errors() {
        assert_eq!(google_matrix(&digraph(&[], &[]), 0.85), Err(PageRankError::Empty));
        let g = digraph(&["a"], &[]);
        assert_eq!(google_matrix(&g, 1.0), Err(PageRankError::Damping(1.0)));
        assert_eq!(google_matrix(&g, 0.0), Err(PageRankError::Damping(0.0)));
    }

    #[test]
    fn symmetric_cases_are_uniform() {
        let two = digraph(&["a", "b"], &[("a", "b", 5), ("b", "a", 5)]);
        let p = pagerank(&two, 0.85, 1e-10, 1000).unwrap();
        assert!((p["a"] - 0.5).abs() < 1e-12 && (p["b"] - 0.5).abs() < 1e-12);
        let cyc = digraph(&["a", "b", "c"], &[("a", "b", 1), ("b", "c", 1), ("c", "a", 1)]);
        for v in pagerank(&cyc, 0.85, 1e-10, 1000).unwrap().values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_convergence_reports_residual() {
        let g = digraph(&["a", "b", "c"], &[("a", "b", 1), ("b", "c", 7), ("c", "a", 2), ("a", "c", 1)]);
        match pagerank(&g, 0.85, 1e-15, 2) {
            Err(PageRankError::NotConverged { iterations: 2, residual }) => assert!(residual > 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn random_digraph() -> impl Strategy<Value = (usize, Vec<(usize, usize, u64)>)> {
        (2usize..9).prop_flat_map(|n| {
            let edge = (0..n, 0..n, 1u64..20).prop_filter("loop", |(u, v, _)| u != v);
            (Just(n), proptest::collection::vec(edge, 0..30))
        })
    }

    proptest! {
        #[test]
        fn stochastic_and_stationary((n, raw) in random_digraph()) {
            let mut weights = BTreeMap::new();
            for (u, v, w) in raw {
                weights.insert((format!("N{u}"), format!("N{v}")), w);
            }
            let nodes = (0..n).map(|i| crate::graph::tests::node(&format!("N{i}"))).collect();
            let g = WeightedDigraph::new(nodes, weights).unwrap();
            let m = google_matrix(&g, 0.85).unwrap();
            let floor = 0.15 / n as f64 - 1e-15;
            for row in m.rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(row.iter().all(|&x| x >= floor));
            }
            let edges: Vec<_> = g.edges().iter().map(|e| (e.src, e.dst, e.weight)).collect();
            let dense = dense_google_matrix(n, &edges, 0.85);
            for (a, b) in m.rows().iter().flatten().zip(dense.iter().flatten()) {
                prop_assert!((a - b).abs() < 1e-15);
            }
            let p = pagerank_indexed(&g, 0.85, 1e-10, 1000).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x >= floor));
            let pg = left_multiply(&p, &dense);
            let residual: f64 = pg.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            prop_assert!(residual <= 1e-10);
        }
    }
}
