//! Edge betweenness under inverse-weight path lengths.
//!
//! Brandes accumulation on top of Dijkstra, one single-source pass per node.
//! Path lengths are sums of `1/w`, so two mathematically equal lengths can
//! differ in the last bits; lengths within `1e-12` (relative) are treated as
//! ties. Distinct lengths on realistic weights differ by far more than that.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use crate::graph::WeightedDigraph;
use crate::par::{map_indexed, Execution};

const TIE_TOLERANCE: f64 = 1e-12;

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Min-heap on distance, then node index.
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Contribution of source `s` to every edge's score.
fn single_source(g: &WeightedDigraph, lengths: &[f64], s: usize) -> Vec<f64> {
    let n = g.node_count();
    let edges = g.edges();
    let mut dist = vec![f64::INFINITY; n];
    let mut sigma = vec![0.0f64; n];
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut settled = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut heap = BinaryHeap::new();

    dist[s] = 0.0;
    sigma[s] = 1.0;
    heap.push(Entry { dist: 0.0, node: s });
    while let Some(Entry { dist: d, node: v }) = heap.pop() {
        if settled[v] || d > dist[v] {
            continue;
        }
        settled[v] = true;
        order.push(v);
        for &k in g.out_edges(v) {
            let w = edges[k].dst;
            if settled[w] {
                continue;
            }
            let alt = d + lengths[k];
            if dist[w].is_finite() && ties(alt, dist[w]) {
                sigma[w] += sigma[v];
                pred[w].push(k);
            } else if alt < dist[w] {
                dist[w] = alt;
                sigma[w] = sigma[v];
                pred[w].clear();
                pred[w].push(k);
                heap.push(Entry { dist: alt, node: w });
            }
        }
    }

    let mut score = vec![0.0; edges.len()];
    let mut delta = vec![0.0f64; n];
    for &w in order.iter().rev() {
        for &k in &pred[w] {
            let v = edges[k].src;
            let c = sigma[v] / sigma[w] * (1.0 + delta[w]);
            score[k] += c;
            delta[v] += c;
        }
    }
    score
}

/// Edge betweenness indexed like [`WeightedDigraph::edges`]. Unnormalized:
/// each ordered pair `(s, t)` with a path spreads one unit over its shortest
/// paths.
pub fn edge_betweenness_indexed(g: &WeightedDigraph, exec: Execution) -> Vec<f64> {
    let lengths = g.edge_lengths();
    let per_source = map_indexed(exec, g.node_count(), |s| single_source(g, &lengths, s));
    let mut total = vec![0.0; g.edge_count()];
    for contrib in per_source {
        for (t, c) in total.iter_mut().zip(contrib) {
            *t += c;
        }
    }
    total
}

pub fn edge_betweenness(g: &WeightedDigraph) -> BTreeMap<(String, String), f64> {
    let scores = edge_betweenness_indexed(g, Execution::default());
    g.edges()
        .iter()
        .zip(scores)
        .map(|(e, s)| ((g.code(e.src).to_string(), g.code(e.dst).to_string()), s))
        .collect()
}
