//! Edge-level network metrics on the weighted flight digraph.
//!
//! Every weighted edge gets five metrics (six numbers, degree difference
//! counts twice): shortest-path betweenness, max-flow betweenness, the local
//! min-cut between its endpoints, the strength imbalance at each endpoint and
//! its entry in the damped transition matrix.

mod betweenness;
mod maxflow;
mod pagerank;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, WeightedDigraph};
use crate::par::{map_indexed, Execution};

pub use betweenness::{edge_betweenness, edge_betweenness_indexed};
pub use maxflow::{max_flow, max_flow_indexed, MaxFlow};
pub use pagerank::{
    google_matrix, pagerank, pagerank_indexed, GoogleMatrix, PageRankError, DEFAULT_DAMPING,
};

#[derive(Debug, Error, PartialEq)]
pub enum CentralityError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    PageRank(#[from] PageRankError),
}

/// Network metrics attached to every flight on a route.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeGraphFeatures {
    pub betweenness: f64,
    pub flow_betweenness: f64,
    pub edge_connectivity: f64,
    pub degree_diff_src: i64,
    pub degree_diff_dst: i64,
    pub google_entry: f64,
}

/// Per-edge flow summed over every ordered pair, divided by the summed max
/// flow values (floored at 1). Indexed like `g.edges()`.
pub fn flow_betweenness_indexed(g: &WeightedDigraph, exec: Execution) -> Vec<f64> {
    let n = g.node_count();
    let per_source = map_indexed(exec, n, |s| {
        let mut flows = vec![0u64; g.edge_count()];
        let mut value = 0u64;
        for t in (0..n).filter(|&t| t != s) {
            let (v, f) = max_flow_indexed(g, s, t);
            value += v;
            for (acc, x) in flows.iter_mut().zip(f) {
                *acc += x;
            }
        }
        (value, flows)
    });
    let mut total_value = 0u64;
    let mut total_flows = vec![0u64; g.edge_count()];
    for (v, f) in per_source {
        total_value += v;
        for (acc, x) in total_flows.iter_mut().zip(f) {
            *acc += x;
        }
    }
    let denom = total_value.max(1) as f64;
    total_flows.into_iter().map(|f| f as f64 / denom).collect()
}

pub fn flow_betweenness(g: &WeightedDigraph) -> BTreeMap<(String, String), f64> {
    keyed(g, flow_betweenness_indexed(g, Execution::default()))
}

/// Weighted local connectivity: capacity of the minimum `u -> v` cut.
pub fn edge_connectivity(g: &WeightedDigraph, u: &str, v: &str) -> Result<f64, GraphError> {
    let ui = g.index_of(u)?;
    let vi = g.index_of(v)?;
    if g.edge_index(ui, vi).is_none() {
        return Err(GraphError::NoSuchEdge { src: u.to_string(), dst: v.to_string() });
    }
    Ok(max_flow_indexed(g, ui, vi).0 as f64)
}

/// In-strength minus out-strength.
pub fn degree_difference(g: &WeightedDigraph, v: &str) -> Result<i64, GraphError> {
    let (sin, sout) = g.strengths(v)?;
    Ok(sin as i64 - sout as i64)
}

fn keyed(g: &WeightedDigraph, values: Vec<f64>) -> BTreeMap<(String, String), f64> {
    g.edges()
        .iter()
        .zip(values)
        .map(|(e, x)| ((g.code(e.src).to_string(), g.code(e.dst).to_string()), x))
        .collect()
}

/// All edge metrics, indexed like `g.edges()`.
pub fn edge_features_indexed(
    g: &WeightedDigraph,
    exec: Execution,
) -> Result<Vec<EdgeGraphFeatures>, CentralityError> {
    let google = GoogleMatrix::new(g, DEFAULT_DAMPING)?;
    let betweenness = edge_betweenness_indexed(g, exec);
    let flow = flow_betweenness_indexed(g, exec);
    let connectivity = map_indexed(exec, g.edge_count(), |k| {
        let e = g.edges()[k];
        max_flow_indexed(g, e.src, e.dst).0 as f64
    });
    let dd: Vec<i64> = (0..g.node_count())
        .map(|v| {
            let (sin, sout) = g.strengths_at(v);
            sin as i64 - sout as i64
        })
        .collect();
    Ok(g.edges()
        .iter()
        .enumerate()
        .map(|(k, e)| EdgeGraphFeatures {
            betweenness: betweenness[k],
            flow_betweenness: flow[k],
            edge_connectivity: connectivity[k],
            degree_diff_src: dd[e.src],
            degree_diff_dst: dd[e.dst],
            google_entry: google.entry(e.src, e.dst),
        })
        .collect())
}

pub fn compute_all_edge_features(
    g: &WeightedDigraph,
) -> Result<BTreeMap<(String, String), EdgeGraphFeatures>, CentralityError> {
    let feats = edge_features_indexed(g, Execution::default())?;
    Ok(g.edges()
        .iter()
        .zip(feats)
        .map(|(e, f)| ((g.code(e.src).to_string(), g.code(e.dst).to_string()), f))
        .collect())
}

pub const FEATURE_CSV_HEADER: [&str; 9] = [
    "src",
    "dst",
    "weight",
    "betweenness",
    "flow_betweenness",
    "edge_connectivity",
    "dd_src",
    "dd_dst",
    "google_entry",
];

/// CSV dump of the edge metrics, rows in `(src, dst)` order.
pub fn write_feature_csv<W: Write>(
    g: &WeightedDigraph,
    features: &BTreeMap<(String, String), EdgeGraphFeatures>,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FEATURE_CSV_HEADER)?;
    for ((src, dst), f) in features {
        let weight = g.weight(src, dst).unwrap_or(0);
        w.write_record([
            src.clone(),
            dst.clone(),
            weight.to_string(),
            f.betweenness.to_string(),
            f.flow_betweenness.to_string(),
            f.edge_connectivity.to_string(),
            f.degree_diff_src.to_string(),
            f.degree_diff_dst.to_string(),
            f.google_entry.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
