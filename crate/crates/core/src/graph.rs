//! Flight multigraph and its weight-aggregated digraph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::FlightRecord;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("node `{code}` redefined with different coordinates")]
    InconsistentNode { code: String },
    #[error("invalid node `{code}`: {reason}")]
    InvalidNode { code: String, reason: String },
    #[error("self-loop flight at `{0}`")]
    SelfLoop(String),
    #[error("source and target are both `{0}`")]
    SameEndpoints(String),
    #[error("duplicate edge id {0}")]
    DuplicateEdgeId(u64),
    #[error("edge {src}->{dst} has zero weight")]
    ZeroWeight { src: String, dst: String },
    #[error("no edge {src}->{dst}")]
    NoSuchEdge { src: String, dst: String },
    #[error("graph is empty")]
    Empty,
    #[error("malformed graph file: {0}")]
    Format(String),
}

/// An airport.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirportNode {
    pub code: String,
    pub lat: f64,
    pub lon: f64,
    #[serde(rename = "alt")]
    pub altitude: f64,
}

impl AirportNode {
    pub fn new(code: impl Into<String>, lat: f64, lon: f64, altitude: f64) -> Result<Self, GraphError> {
        let node = AirportNode { code: code.into(), lat, lon, altitude };
        node.validate()?;
        Ok(node)
    }

    fn validate(&self) -> Result<(), GraphError> {
        let bad = |reason: &str| {
            Err(GraphError::InvalidNode { code: self.code.clone(), reason: reason.to_string() })
        };
        if self.code.is_empty() {
            return bad("empty code");
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return bad("latitude outside [-90, 90]");
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return bad("longitude outside [-180, 180]");
        }
        if !(self.altitude >= -430.0) || !self.altitude.is_finite() {
            return bad("altitude below -430 m");
        }
        Ok(())
    }
}

/// One flight: a directed edge of the multigraph.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightEdge {
    pub id: u64,
    pub src: String,
    pub dst: String,
    /// Index of the originating record in its dataset.
    pub record_ref: usize,
}

/// Directed multigraph of flights; parallel edges are kept.
#[derive(Debug, Clone, Default)]
pub struct FlightMultigraph {
    nodes: BTreeMap<String, AirportNode>,
    edges: Vec<FlightEdge>,
    ids: BTreeSet<u64>,
}

impl FlightMultigraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, node: AirportNode) -> Result<(), GraphError> {
        node.validate()?;
        if self.nodes.contains_key(&node.code) {
            return Err(GraphError::DuplicateNode(node.code));
        }
        self.nodes.insert(node.code.clone(), node);
        Ok(())
    }

    /// Insert `node`, or accept it if an identical node already exists.
    pub fn ensure_node(&mut self, node: AirportNode) -> Result<(), GraphError> {
        match self.nodes.get(&node.code) {
            Some(existing) if *existing == node => Ok(()),
            Some(_) => Err(GraphError::InconsistentNode { code: node.code }),
            None => self.add_node(node),
        }
    }

    pub fn add_edge(&mut self, id: u64, src: &str, dst: &str, record_ref: usize) -> Result<(), GraphError> {
        if src == dst {
            return Err(GraphError::SelfLoop(src.to_string()));
        }
        for code in [src, dst] {
            if !self.nodes.contains_key(code) {
                return Err(GraphError::UnknownNode(code.to_string()));
            }
        }
        if !self.ids.insert(id) {
            return Err(GraphError::DuplicateEdgeId(id));
        }
        self.edges.push(FlightEdge { id, src: src.to_string(), dst: dst.to_string(), record_ref });
        Ok(())
    }

    /// One node per airport seen in `records`, one edge per record (edge id =
    /// record index).
    pub fn from_records(records: &[FlightRecord]) -> Result<Self, GraphError> {
        let mut mg = FlightMultigraph::new();
        for (i, r) in records.iter().enumerate() {
            mg.ensure_node(AirportNode::new(&r.origin, r.lat_src, r.lon_src, r.alt_src_m)?)?;
            mg.ensure_node(AirportNode::new(&r.destination, r.lat_dst, r.lon_dst, r.alt_dst_m)?)?;
            mg.add_edge(i as u64, &r.origin, &r.destination, i)?;
        }
        Ok(mg)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &AirportNode> {
        self.nodes.values()
    }

    pub fn node(&self, code: &str) -> Option<&AirportNode> {
        self.nodes.get(code)
    }

    pub fn edges(&self) -> &[FlightEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn collapse(&self) -> WeightedDigraph {
        collapse_multigraph(self)
    }
}

/// Aggregate parallel flights into one weighted edge per ordered airport pair.
pub fn collapse_multigraph(mg: &FlightMultigraph) -> WeightedDigraph {
    let mut weights: BTreeMap<(String, String), u64> = BTreeMap::new();
    for e in &mg.edges {
        *weights.entry((e.src.clone(), e.dst.clone())).or_insert(0) += 1;
    }
    WeightedDigraph::new(mg.nodes.values().cloned().collect(), weights)
        .expect("a valid multigraph collapses to a valid digraph")
}

/// An edge of the collapsed digraph, endpoints as node indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightedEdge {
    pub src: usize,
    pub dst: usize,
    pub weight: u64,
}

/// Weighted digraph with nodes indexed in lexicographic code order and edges
/// sorted by `(src, dst)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    nodes: Vec<AirportNode>,
    index: BTreeMap<String, usize>,
    edges: Vec<WeightedEdge>,
    out_adj: Vec<Vec<usize>>,
    in_adj: Vec<Vec<usize>>,
}

impl WeightedDigraph {
    pub fn new(
        nodes: Vec<AirportNode>,
        weights: BTreeMap<(String, String), u64>,
    ) -> Result<Self, GraphError> {
        let mut by_code = BTreeMap::new();
        for node in nodes {
            node.validate()?;
            if by_code.contains_key(&node.code) {
                return Err(GraphError::DuplicateNode(node.code));
            }
            by_code.insert(node.code.clone(), node);
        }
        let nodes: Vec<AirportNode> = by_code.into_values().collect();
        let index: BTreeMap<String, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.code.clone(), i)).collect();

        let mut edges = Vec::with_capacity(weights.len());
        let mut out_adj = vec![Vec::new(); nodes.len()];
        let mut in_adj = vec![Vec::new(); nodes.len()];
        // BTreeMap order on (src, dst) codes matches index order.
        for ((src, dst), weight) in weights {
            if src == dst {
                return Err(GraphError::SelfLoop(src));
            }
            if weight == 0 {
                return Err(GraphError::ZeroWeight { src, dst });
            }
            let u = *index.get(&src).ok_or(GraphError::UnknownNode(src))?;
            let v = *index.get(&dst).ok_or(GraphError::UnknownNode(dst))?;
            let k = edges.len();
            edges.push(WeightedEdge { src: u, dst: v, weight });
            out_adj[u].push(k);
            in_adj[v].push(k);
        }
        Ok(WeightedDigraph { nodes, index, edges, out_adj, in_adj })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[AirportNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[WeightedEdge] {
        &self.edges
    }

    pub fn code(&self, i: usize) -> &str {
        &self.nodes[i].code
    }

    pub fn node(&self, code: &str) -> Option<&AirportNode> {
        self.index.get(code).map(|&i| &self.nodes[i])
    }

    pub fn index_of(&self, code: &str) -> Result<usize, GraphError> {
        self.index.get(code).copied().ok_or_else(|| GraphError::UnknownNode(code.to_string()))
    }

    /// Edge indices leaving `u`, ordered by destination.
    pub fn out_edges(&self, u: usize) -> &[usize] {
        &self.out_adj[u]
    }

    /// Edge indices entering `v`, ordered by source.
    pub fn in_edges(&self, v: usize) -> &[usize] {
        &self.in_adj[v]
    }

    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        self.out_adj[u]
            .binary_search_by_key(&v, |&k| self.edges[k].dst)
            .ok()
            .map(|pos| self.out_adj[u][pos])
    }

    pub fn weight(&self, src: &str, dst: &str) -> Option<u64> {
        let u = *self.index.get(src)?;
        let v = *self.index.get(dst)?;
        self.edge_index(u, v).map(|k| self.edges[k].weight)
    }

    pub fn weights(&self) -> BTreeMap<(String, String), u64> {
        self.edges
            .iter()
            .map(|e| ((self.code(e.src).to_string(), self.code(e.dst).to_string()), e.weight))
            .collect()
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// `(in_strength, out_strength)` of the node at index `v`.
    pub fn strengths_at(&self, v: usize) -> (u64, u64) {
        let sin = self.in_adj[v].iter().map(|&k| self.edges[k].weight).sum();
        let sout = self.out_adj[v].iter().map(|&k| self.edges[k].weight).sum();
        (sin, sout)
    }

    pub fn strengths(&self, code: &str) -> Result<(u64, u64), GraphError> {
        Ok(self.strengths_at(self.index_of(code)?))
    }

    /// Forward and reverse reachability from node 0.
    pub fn is_strongly_connected(&self) -> Result<bool, GraphError> {
        if self.is_empty() {
            return Err(GraphError::Empty);
        }
        let reach = |forward: bool| {
            let mut seen = vec![false; self.node_count()];
            let mut queue = VecDeque::from([0usize]);
            seen[0] = true;
            while let Some(u) = queue.pop_front() {
                let adj = if forward { &self.out_adj[u] } else { &self.in_adj[u] };
                for &k in adj {
                    let e = self.edges[k];
                    let w = if forward { e.dst } else { e.src };
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        Ok(reach(true) && reach(false))
    }

    /// Path length of every edge, indexed like [`edges`](Self::edges).
    pub fn edge_lengths(&self) -> Vec<f64> {
        self.edges.iter().map(|e| 1.0 / e.weight as f64).collect()
    }

    /// Inverse-weight lengths: busier routes are shorter.
    pub fn distance_transform(&self) -> BTreeMap<(String, String), f64> {
        self.edges
            .iter()
            .map(|e| {
                ((self.code(e.src).to_string(), self.code(e.dst).to_string()), 1.0 / e.weight as f64)
            })
            .collect()
    }

    /// Same nodes, every edge flipped.
    pub fn reversed(&self) -> WeightedDigraph {
        let weights = self
            .edges
            .iter()
            .map(|e| ((self.code(e.dst).to_string(), self.code(e.src).to_string()), e.weight))
            .collect();
        WeightedDigraph::new(self.nodes.clone(), weights).expect("reversal preserves validity")
    }

    pub fn to_json(&self) -> Vec<u8> {
        let file = GraphFile {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeEntry {
                    src: self.code(e.src).to_string(),
                    dst: self.code(e.dst).to_string(),
                    weight: e.weight,
                })
                .collect(),
        };
        serde_json::to_vec_pretty(&file).expect("graph serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, GraphError> {
        let file: GraphFile =
            serde_json::from_slice(bytes).map_err(|e| GraphError::Format(e.to_string()))?;
        let mut weights = BTreeMap::new();
        for e in file.edges {
            let key = (e.src, e.dst);
            if weights.insert(key.clone(), e.weight).is_some() {
                return Err(GraphError::Format(format!("duplicate edge {}->{}", key.0, key.1)));
            }
        }
        WeightedDigraph::new(file.nodes, weights)
    }
}

#[derive(Serialize, Deserialize)]
struct EdgeEntry {
    src: String,
    dst: String,
    weight: u64,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<AirportNode>,
    edges: Vec<EdgeEntry>,
}
