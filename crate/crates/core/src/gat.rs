//! Graph attention network over the flight multigraph.
//!
//! Every flight is its own directed edge. A destination airport attends over
//! all of its incoming flights; the raw score of flight `k` from `j` to `i` is
//! `LeakyReLU(a_dst·W h_i + a_src·W h_j + a_edge·W2 e_k)`, normalized with a
//! softmax per destination. Messages are `W h_j`, each head applies ELU, and
//! heads are concatenated on hidden layers and averaged on the last one. A
//! one-hidden-layer MLP on `[h_src ‖ h_dst ‖ e_k]` scores each flight.
//!
//! Nodes with no incoming flight attend to a self-loop with a zero edge
//! vector so they still carry a representation forward.
//!
//! Gradients are written out by hand and verified against finite differences.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{AugmentedRecord, FeatureRegistry};
use crate::graph::FlightMultigraph;
use crate::ingest::FlightRecord;
use crate::EdgeGraphFeatures;

pub const PARAMS_VERSION: u32 = 1;
pub const MAX_LAYERS: usize = 64;
/// `[lat, lon, altitude, in_strength, out_strength]`
pub const NODE_FEATURES: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum GatError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("batch shape: {0}")]
    Shape(String),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("unsupported parameter version {0}")]
    Version(u64),
    #[error("corrupt parameter file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatConfig {
    pub layers: usize,
    pub heads: usize,
    /// Width of the input node features.
    pub node_dim: usize,
    /// Width of each head's output, and of the MLP hidden layer.
    pub hidden_dim: usize,
    pub leaky_slope: f64,
    /// `None` means `N_neg / N_pos` of the training batch.
    pub positive_class_weight: Option<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig {
            layers: 1,
            heads: 4,
            node_dim: NODE_FEATURES,
            hidden_dim: 8,
            leaky_slope: 0.2,
            positive_class_weight: None,
            learning_rate: 0.05,
            epochs: 100,
            seed: 0,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<(), GatError> {
        let bad = |m: &str| Err(GatError::Config(m.to_string()));
        if self.layers < 1 || self.layers > MAX_LAYERS {
            return bad("layers must be in 1..=64");
        }
        if self.heads < 1 || self.node_dim < 1 || self.hidden_dim < 1 {
            return bad("heads, node_dim and hidden_dim must be >= 1");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad("leaky_slope must be in (0, 1)");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if let Some(w) = self.positive_class_weight {
            if !(w > 0.0 && w.is_finite()) {
                return bad("positive_class_weight must be positive");
            }
        }
        Ok(())
    }

    fn layer_input(&self, l: usize) -> usize {
        if l == 0 {
            self.node_dim
        } else {
            self.heads * self.hidden_dim
        }
    }
}

/// Dense row-major matrix, serialized as nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.data.chunks(m.cols.max(1)).take(m.rows).map(|r| r[..m.cols].to_vec()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, String> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err("ragged matrix".into());
        }
        Ok(Matrix { rows: rows.len(), cols, data: rows.concat() })
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        Matrix { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `out += selfᵀ y`
    fn mul_t_add(&self, y: &[f64], out: &mut [f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), out);
            }
        }
    }

    /// `self += y xᵀ`
    fn outer_add(&mut self, y: &[f64], x: &[f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, x, &mut self.data[r * self.cols..(r + 1) * self.cols]);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn uniform_vec(n: usize, limit: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-limit..limit)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParameters {
    /// `hidden × input`
    pub w: Matrix,
    /// `hidden × edge_dim`
    pub w_edge: Matrix,
    pub a_dst: Vec<f64>,
    pub a_src: Vec<f64>,
    pub a_edge: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatParameters {
    pub layers: Vec<Vec<HeadParameters>>,
    /// `hidden × (2·embedding + edge_dim)`
    pub mlp_w: Matrix,
    pub mlp_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub out_b: f64,
}

impl GatParameters {
    pub fn zeros(cfg: &GatConfig, edge_dim: usize) -> Self {
        let h = cfg.hidden_dim;
        let layers = (0..cfg.layers)
            .map(|l| {
                (0..cfg.heads)
                    .map(|_| HeadParameters {
                        w: Matrix::zeros(h, cfg.layer_input(l)),
                        w_edge: Matrix::zeros(h, edge_dim),
                        a_dst: vec![0.0; h],
                        a_src: vec![0.0; h],
                        a_edge: vec![0.0; h],
                    })
                    .collect()
            })
            .collect();
        GatParameters {
            layers,
            mlp_w: Matrix::zeros(h, 2 * h + edge_dim),
            mlp_b: vec![0.0; h],
            out_w: vec![0.0; h],
            out_b: 0.0,
        }
    }

    /// Glorot-uniform weights and zero biases, drawn from `cfg.seed`.
    pub fn init(cfg: &GatConfig, edge_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let h = cfg.hidden_dim;
        let att = (6.0 / (h + 1) as f64).sqrt();
        let layers = (0..cfg.layers)
            .map(|l| {
                (0..cfg.heads)
                    .map(|_| HeadParameters {
                        w: Matrix::glorot(h, cfg.layer_input(l), &mut rng),
                        w_edge: Matrix::glorot(h, edge_dim, &mut rng),
                        a_dst: uniform_vec(h, att, &mut rng),
                        a_src: uniform_vec(h, att, &mut rng),
                        a_edge: uniform_vec(h, att, &mut rng),
                    })
                    .collect()
            })
            .collect();
        let mlp_w = Matrix::glorot(h, 2 * h + edge_dim, &mut rng);
        let out_w = uniform_vec(h, (6.0 / (h + 1) as f64).sqrt(), &mut rng);
        GatParameters { layers, mlp_w, mlp_b: vec![0.0; h], out_w, out_b: 0.0 }
    }

    pub fn edge_dim(&self) -> usize {
        self.layers[0][0].w_edge.cols
    }

    /// Every parameter tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for head in self.layers.iter().flatten() {
            out.extend([&head.w.data[..], &head.w_edge.data, &head.a_dst, &head.a_src, &head.a_edge]);
        }
        out.extend([&self.mlp_w.data[..], &self.mlp_b, &self.out_w, std::slice::from_ref(&self.out_b)]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for head in self.layers.iter_mut().flatten() {
            out.push(&mut head.w.data);
            out.push(&mut head.w_edge.data);
            out.push(&mut head.a_dst);
            out.push(&mut head.a_src);
            out.push(&mut head.a_edge);
        }
        out.push(&mut self.mlp_w.data);
        out.push(&mut self.mlp_b);
        out.push(&mut self.out_w);
        out.push(std::slice::from_mut(&mut self.out_b));
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn check_shapes(&self, cfg: &GatConfig) -> Result<(), GatError> {
        let mut expected = GatParameters::zeros(cfg, self.layers.first().and_then(|l| l.first()).map_or(0, |h| h.w_edge.cols));
        let ours: Vec<usize> = self.tensors().iter().map(|t| t.len()).collect();
        let want: Vec<usize> = expected.tensors_mut().iter().map(|t| t.len()).collect();
        let matrices_ok = self.layers.len() == expected.layers.len()
            && self.layers.iter().zip(&expected.layers).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| x.w.shape() == y.w.shape() && x.w_edge.shape() == y.w_edge.shape())
            })
            && self.mlp_w.shape() == expected.mlp_w.shape();
        if ours != want || !matrices_ok {
            return Err(GatError::Corrupt("tensor shapes do not match the config".into()));
        }
        Ok(())
    }
}

/// Multigraph input: one row of node features per airport and one edge per
/// flight, in record order.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub nodes: Vec<String>,
    pub node_features: Vec<Vec<f64>>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub edge_features: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl GraphBatch {
    pub fn new(
        nodes: Vec<String>,
        node_features: Vec<Vec<f64>>,
        edges: &[(usize, usize)],
        edge_features: Vec<Vec<f64>>,
        labels: Vec<bool>,
    ) -> Result<Self, GatError> {
        let n = nodes.len();
        let shape = |m: String| Err(GatError::Shape(m));
        if node_features.len() != n {
            return shape(format!("{} node rows for {n} nodes", node_features.len()));
        }
        if edge_features.len() != edges.len() || labels.len() != edges.len() {
            return shape("edge features and labels must match the edge count".into());
        }
        let nd = node_features.first().map_or(0, |r| r.len());
        let ed = edge_features.first().map_or(0, |r| r.len());
        if node_features.iter().any(|r| r.len() != nd) || edge_features.iter().any(|r| r.len() != ed) {
            return shape("ragged feature rows".into());
        }
        if let Some(&(u, v)) = edges.iter().find(|(u, v)| *u >= n || *v >= n || u == v) {
            return shape(format!("invalid edge ({u}, {v})"));
        }
        if node_features.iter().chain(&edge_features).flatten().any(|x| !x.is_finite()) {
            return shape("non-finite feature".into());
        }
        Ok(GraphBatch {
            nodes,
            node_features,
            src: edges.iter().map(|e| e.0).collect(),
            dst: edges.iter().map(|e| e.1).collect(),
            edge_features,
            labels,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.first().map_or(0, |r| r.len())
    }

    pub fn node_dim(&self) -> usize {
        self.node_features.first().map_or(0, |r| r.len())
    }

    /// `N_neg / N_pos`, or 1 when a class is missing.
    pub fn balanced_weight(&self) -> f64 {
        let pos = self.labels.iter().filter(|&&b| b).count();
        let neg = self.labels.len() - pos;
        if pos == 0 || neg == 0 {
            1.0
        } else {
            neg as f64 / pos as f64
        }
    }
}

/// Column-wise z-scoring; constant columns keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            axpy(1.0 / n, r, &mut mean);
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Turns flight records into standardized batches using training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchBuilder {
    /// Training in/out flight counts per airport.
    strengths: BTreeMap<String, (u64, u64)>,
    node_scaler: Standardizer,
    edge_scaler: Standardizer,
    edge_columns: Vec<String>,
}

fn edge_row(registry: &FeatureRegistry, r: &FlightRecord) -> Vec<f64> {
    let a = AugmentedRecord { record: r.clone(), graph: EdgeGraphFeatures::default(), unseen_route: false };
    registry.encode(&a)
}

fn airport_rows(records: &[FlightRecord]) -> Result<BTreeMap<String, [f64; 3]>, GatError> {
    let g = FlightMultigraph::from_records(records)?;
    Ok(g.nodes().map(|n| (n.code.clone(), [n.lat, n.lon, n.altitude])).collect())
}

impl BatchBuilder {
    pub fn fit(train: &[FlightRecord]) -> Result<Self, GatError> {
        let registry = FeatureRegistry::tabular();
        let mut strengths: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        for r in train {
            strengths.entry(r.origin.clone()).or_default().1 += 1;
            strengths.entry(r.destination.clone()).or_default().0 += 1;
        }
        let airports = airport_rows(train)?;
        let node_rows: Vec<Vec<f64>> = airports
            .iter()
            .map(|(code, geo)| {
                let (i, o) = strengths[code];
                vec![geo[0], geo[1], geo[2], i as f64, o as f64]
            })
            .collect();
        let edge_rows: Vec<Vec<f64>> = train.iter().map(|r| edge_row(&registry, r)).collect();
        Ok(BatchBuilder {
            strengths,
            node_scaler: Standardizer::fit(&node_rows),
            edge_scaler: Standardizer::fit(&edge_rows),
            edge_columns: registry.names(),
        })
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_columns.len()
    }

    /// Airports are those named by `records`, in code order; strengths come
    /// from the training flights (zero for airports unseen in training).
    pub fn batch(&self, records: &[FlightRecord]) -> Result<GraphBatch, GatError> {
        let registry = FeatureRegistry::tabular();
        let airports = airport_rows(records)?;
        let index: BTreeMap<&str, usize> = airports.keys().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let node_features = airports
            .iter()
            .map(|(code, geo)| {
                let (i, o) = self.strengths.get(code).copied().unwrap_or((0, 0));
                self.node_scaler.apply(&[geo[0], geo[1], geo[2], i as f64, o as f64])
            })
            .collect();
        let edges: Vec<(usize, usize)> = records
            .iter()
            .map(|r| (index[r.origin.as_str()], index[r.destination.as_str()]))
            .collect();
        let edge_features = records.iter().map(|r| self.edge_scaler.apply(&edge_row(&registry, r))).collect();
        let labels = records.iter().map(|r| r.holding).collect();
        GraphBatch::new(airports.into_keys().collect(), node_features, &edges, edge_features, labels)
    }
}

/// One attention edge: a flight, or the self-loop of a node without
/// incoming flights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionEdge {
    pub src: usize,
    pub dst: usize,
    pub flight: Option<usize>,
    pub alpha: f64,
}

struct Topology {
    src: Vec<usize>,
    dst: Vec<usize>,
    flights: usize,
    incoming: Vec<Vec<usize>>,
}

impl Topology {
    fn new(b: &GraphBatch) -> Self {
        let mut src = b.src.clone();
        let mut dst = b.dst.clone();
        let mut has_in = vec![false; b.node_count()];
        for &d in &b.dst {
            has_in[d] = true;
        }
        for (v, _) in has_in.iter().enumerate().filter(|(_, &h)| !h) {
            src.push(v);
            dst.push(v);
        }
        let mut incoming = vec![Vec::new(); b.node_count()];
        for (k, &d) in dst.iter().enumerate() {
            incoming[d].push(k);
        }
        Topology { src, dst, flights: b.edge_count(), incoming }
    }
}

struct HeadCache {
    p: Vec<Vec<f64>>,
    raw: Vec<f64>,
    alpha: Vec<f64>,
    z: Vec<Vec<f64>>,
}

struct Forward {
    /// Input to each layer, then the final embeddings.
    h: Vec<Vec<Vec<f64>>>,
    heads: Vec<Vec<HeadCache>>,
    mlp_hidden: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sigmoid(z: f64) -> f64 {
    crate::gbdt::sigmoid(z)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// A configured network with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gat {
    pub config: GatConfig,
    pub params: GatParameters,
}

#[derive(Serialize, Deserialize)]
struct ParamFile {
    version: u32,
    config: GatConfig,
    tensors: GatParameters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    batch_builder: Option<BatchBuilder>,
}

impl Gat {
    pub fn new(config: GatConfig, edge_dim: usize) -> Result<Self, GatError> {
        config.validate()?;
        let params = GatParameters::init(&config, edge_dim);
        Ok(Gat { config, params })
    }

    pub fn zeros(config: GatConfig, edge_dim: usize) -> Result<Self, GatError> {
        config.validate()?;
        let params = GatParameters::zeros(&config, edge_dim);
        Ok(Gat { config, params })
    }

    pub fn with_parameters(config: GatConfig, params: GatParameters) -> Result<Self, GatError> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Gat { config, params })
    }

    fn check_batch(&self, b: &GraphBatch) -> Result<(), GatError> {
        if b.node_count() > 0 && b.node_dim() != self.config.node_dim {
            return Err(GatError::Shape(format!("node features have width {}, expected {}", b.node_dim(), self.config.node_dim)));
        }
        if b.edge_count() > 0 && b.edge_dim() != self.params.edge_dim() {
            return Err(GatError::Shape(format!("edge features have width {}, expected {}", b.edge_dim(), self.params.edge_dim())));
        }
        Ok(())
    }

    fn forward(&self, b: &GraphBatch, topo: &Topology) -> Forward {
        let cfg = &self.config;
        let n = b.node_count();
        let mut hs = vec![b.node_features.clone()];
        let mut caches = Vec::with_capacity(cfg.layers);
        for (l, layer) in self.params.layers.iter().enumerate() {
            let last = l + 1 == cfg.layers;
            let input = &hs[l];
            let mut head_caches = Vec::with_capacity(cfg.heads);
            let width = if last { cfg.hidden_dim } else { cfg.heads * cfg.hidden_dim };
            let mut out = vec![vec![0.0; width]; n];
            for (k, hp) in layer.iter().enumerate() {
                let cache = self.head_forward(hp, input, b, topo);
                for (i, row) in out.iter_mut().enumerate() {
                    for (c, &z) in cache.z[i].iter().enumerate() {
                        if last {
                            row[c] += elu(z) / cfg.heads as f64;
                        } else {
                            row[k * cfg.hidden_dim + c] = elu(z);
                        }
                    }
                }
                head_caches.push(cache);
            }
            caches.push(head_caches);
            hs.push(out);
        }
        let emb = hs.last().expect("at least one layer");
        let mut mlp_hidden = Vec::with_capacity(topo.flights);
        let mut logits = Vec::with_capacity(topo.flights);
        for k in 0..topo.flights {
            let x = [&emb[b.src[k]][..], &emb[b.dst[k]], &b.edge_features[k]].concat();
            let u: Vec<f64> = self.params.mlp_w.mul_vec(&x).iter().zip(&self.params.mlp_b).map(|(a, c)| (a + c).tanh()).collect();
            logits.push(dot(&self.params.out_w, &u) + self.params.out_b);
            mlp_hidden.push(u);
        }
        Forward { h: hs, heads: caches, mlp_hidden, logits }
    }

    fn head_forward(&self, hp: &HeadParameters, input: &[Vec<f64>], b: &GraphBatch, topo: &Topology) -> HeadCache {
        let p: Vec<Vec<f64>> = input.iter().map(|x| hp.w.mul_vec(x)).collect();
        let sd: Vec<f64> = p.iter().map(|x| dot(&hp.a_dst, x)).collect();
        let ss: Vec<f64> = p.iter().map(|x| dot(&hp.a_src, x)).collect();
        let mut c = vec![0.0; hp.w_edge.cols];
        hp.w_edge.mul_t_add(&hp.a_edge, &mut c);
        let raw: Vec<f64> = (0..topo.src.len())
            .map(|k| {
                let se = if k < topo.flights { dot(&c, &b.edge_features[k]) } else { 0.0 };
                sd[topo.dst[k]] + ss[topo.src[k]] + se
            })
            .collect();
        let mut alpha = vec![0.0; raw.len()];
        let mut z = vec![vec![0.0; hp.w.rows]; input.len()];
        for (i, group) in topo.incoming.iter().enumerate() {
            let scores: Vec<f64> = group.iter().map(|&k| leaky(raw[k], self.config.leaky_slope)).collect();
            for (&k, a) in group.iter().zip(softmax(&scores)) {
                alpha[k] = a;
                axpy(a, &p[topo.src[k]], &mut z[i]);
            }
        }
        HeadCache { p, raw, alpha, z }
    }

    fn weight_for(&self, b: &GraphBatch) -> f64 {
        self.config.positive_class_weight.unwrap_or_else(|| b.balanced_weight())
    }

    fn loss_from_logits(&self, b: &GraphBatch, logits: &[f64], pos_w: f64) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (&f, &y) in logits.iter().zip(&b.labels) {
            let (w, t) = if y { (pos_w, 1.0) } else { (1.0, 0.0) };
            num += w * (softplus(f) - t * f);
            den += w;
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    /// Normalized attention of every attention edge at one layer and head.
    pub fn attention_scores(&self, layer: usize, head: usize, b: &GraphBatch) -> Result<Vec<AttentionEdge>, GatError> {
        self.check_batch(b)?;
        if layer >= self.config.layers || head >= self.config.heads {
            return Err(GatError::Config(format!("no head {head} at layer {layer}")));
        }
        let topo = Topology::new(b);
        let fwd = self.forward(b, &topo);
        let alpha = &fwd.heads[layer][head].alpha;
        Ok((0..topo.src.len())
            .map(|k| AttentionEdge {
                src: topo.src[k],
                dst: topo.dst[k],
                flight: (k < topo.flights).then_some(k),
                alpha: alpha[k],
            })
            .collect())
    }

    /// Node representations after `layer` (0-based).
    pub fn layer_forward(&self, layer: usize, b: &GraphBatch) -> Result<Vec<Vec<f64>>, GatError> {
        self.check_batch(b)?;
        if layer >= self.config.layers {
            return Err(GatError::Config(format!("no layer {layer}")));
        }
        let fwd = self.forward(b, &Topology::new(b));
        Ok(fwd.h[layer + 1].clone())
    }

    /// Holding probability for every flight.
    pub fn edge_predict(&self, b: &GraphBatch) -> Result<Vec<f64>, GatError> {
        self.check_batch(b)?;
        let fwd = self.forward(b, &Topology::new(b));
        Ok(fwd.logits.into_iter().map(sigmoid).collect())
    }

    /// Class-weighted cross-entropy, normalized by the total weight.
    pub fn loss(&self, b: &GraphBatch) -> Result<f64, GatError> {
        self.check_batch(b)?;
        let fwd = self.forward(b, &Topology::new(b));
        Ok(self.loss_from_logits(b, &fwd.logits, self.weight_for(b)))
    }

    pub fn loss_and_gradient(&self, b: &GraphBatch) -> Result<(f64, GatParameters), GatError> {
        self.check_batch(b)?;
        let topo = Topology::new(b);
        let fwd = self.forward(b, &topo);
        let pos_w = self.weight_for(b);
        let loss = self.loss_from_logits(b, &fwd.logits, pos_w);
        Ok((loss, self.backward(b, &topo, &fwd, pos_w)))
    }

    fn backward(&self, b: &GraphBatch, topo: &Topology, fwd: &Forward, pos_w: f64) -> GatParameters {
        let cfg = &self.config;
        let p = &self.params;
        let mut g = GatParameters::zeros(cfg, p.edge_dim());
        let total_w: f64 = b.labels.iter().map(|&y| if y { pos_w } else { 1.0 }).sum();
        let hd = cfg.hidden_dim;

        let emb = fwd.h.last().expect("embeddings");
        let mut d_h = vec![vec![0.0; emb[0].len()]; b.node_count()];
        for k in 0..topo.flights {
            let y = b.labels[k];
            let w = if y { pos_w } else { 1.0 };
            let d_logit = w * (sigmoid(fwd.logits[k]) - if y { 1.0 } else { 0.0 }) / total_w;
            let u = &fwd.mlp_hidden[k];
            axpy(d_logit, u, &mut g.out_w);
            g.out_b += d_logit;
            let d_pre: Vec<f64> = u.iter().zip(&p.out_w).map(|(ui, wi)| d_logit * wi * (1.0 - ui * ui)).collect();
            let x = [&emb[b.src[k]][..], &emb[b.dst[k]], &b.edge_features[k]].concat();
            g.mlp_w.outer_add(&d_pre, &x);
            axpy(1.0, &d_pre, &mut g.mlp_b);
            let mut dx = vec![0.0; x.len()];
            p.mlp_w.mul_t_add(&d_pre, &mut dx);
            axpy(1.0, &dx[..hd], &mut d_h[b.src[k]]);
            axpy(1.0, &dx[hd..2 * hd], &mut d_h[b.dst[k]]);
        }

        for l in (0..cfg.layers).rev() {
            let last = l + 1 == cfg.layers;
            let input = &fwd.h[l];
            let mut d_in = vec![vec![0.0; input[0].len()]; input.len()];
            for k in 0..cfg.heads {
                let d_out: Vec<&[f64]> = d_h
                    .iter()
                    .map(|row| if last { &row[..] } else { &row[k * hd..(k + 1) * hd] })
                    .collect();
                let scale = if last { 1.0 / cfg.heads as f64 } else { 1.0 };
                self.head_backward(
                    &p.layers[l][k],
                    &mut g.layers[l][k],
                    &fwd.heads[l][k],
                    input,
                    &d_out,
                    scale,
                    &mut d_in,
                    b,
                    topo,
                );
            }
            d_h = d_in;
        }
        g
    }

    #[allow(clippy::too_many_arguments)]
    fn head_backward(
        &self,
        hp: &HeadParameters,
        gp: &mut HeadParameters,
        cache: &HeadCache,
        input: &[Vec<f64>],
        d_out: &[&[f64]],
        scale: f64,
        d_in: &mut [Vec<f64>],
        b: &GraphBatch,
        topo: &Topology,
    ) {
        let n = input.len();
        let hd = hp.w.rows;
        let d_z: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                cache.z[i]
                    .iter()
                    .zip(d_out[i])
                    .map(|(&z, &d)| scale * d * if z > 0.0 { 1.0 } else { z.exp() })
                    .collect()
            })
            .collect();
        let mut d_p = vec![vec![0.0; hd]; n];
        let mut d_sd = vec![0.0; n];
        let mut d_ss = vec![0.0; n];
        let mut v = vec![0.0; hp.w_edge.cols];
        for (i, group) in topo.incoming.iter().enumerate() {
            let d_alpha: Vec<f64> = group.iter().map(|&k| dot(&d_z[i], &cache.p[topo.src[k]])).collect();
            let mean: f64 = group.iter().zip(&d_alpha).map(|(&k, da)| cache.alpha[k] * da).sum();
            for (&k, da) in group.iter().zip(&d_alpha) {
                let a = cache.alpha[k];
                axpy(a, &d_z[i], &mut d_p[topo.src[k]]);
                let d_raw = a * (da - mean) * if cache.raw[k] > 0.0 { 1.0 } else { self.config.leaky_slope };
                d_sd[i] += d_raw;
                d_ss[topo.src[k]] += d_raw;
                if k < topo.flights {
                    axpy(d_raw, &b.edge_features[k], &mut v);
                }
            }
        }
        for i in 0..n {
            axpy(d_sd[i], &cache.p[i], &mut gp.a_dst);
            axpy(d_ss[i], &cache.p[i], &mut gp.a_src);
            axpy(d_sd[i], &hp.a_dst, &mut d_p[i]);
            axpy(d_ss[i], &hp.a_src, &mut d_p[i]);
        }
        let edge_grad = hp.w_edge.mul_vec(&v);
        axpy(1.0, &edge_grad, &mut gp.a_edge);
        gp.w_edge.outer_add(&hp.a_edge, &v);
        for i in 0..n {
            gp.w.outer_add(&d_p[i], &input[i]);
            hp.w.mul_t_add(&d_p[i], &mut d_in[i]);
        }
    }

    /// Largest `|g_a − g_n| / max(|g_a| + |g_n|, 1e-8)` over every parameter,
    /// with central differences of step `eps`.
    pub fn gradient_check(&self, b: &GraphBatch, eps: f64) -> Result<f64, GatError> {
        let (_, analytic) = self.loss_and_gradient(b)?;
        let grads: Vec<f64> = analytic.tensors().concat();
        let mut probe = self.clone();
        let mut worst: f64 = 0.0;
        let mut flat = 0;
        let tensor_lens: Vec<usize> = self.params.tensors().iter().map(|t| t.len()).collect();
        for (t, &len) in tensor_lens.iter().enumerate() {
            for i in 0..len {
                let orig = probe.params.tensors_mut()[t][i];
                probe.params.tensors_mut()[t][i] = orig + eps;
                let up = probe.loss(b)?;
                probe.params.tensors_mut()[t][i] = orig - eps;
                let down = probe.loss(b)?;
                probe.params.tensors_mut()[t][i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let ga = grads[flat];
                worst = worst.max((ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-8));
                flat += 1;
            }
        }
        Ok(worst)
    }

    /// Full-batch gradient descent; returns the loss at the start of every
    /// epoch.
    pub fn train(&mut self, b: &GraphBatch) -> Result<Vec<f64>, GatError> {
        self.check_batch(b)?;
        let pos = b.labels.iter().filter(|&&y| y).count();
        if pos == 0 || pos == b.labels.len() {
            return Err(GatError::SingleClass);
        }
        let lr = self.config.learning_rate;
        let mut trace = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let (loss, grad) = self.loss_and_gradient(b)?;
            if !loss.is_finite() {
                return Err(GatError::Diverged { epoch });
            }
            trace.push(loss);
            for (t, gt) in self.params.tensors_mut().into_iter().zip(grad.tensors()) {
                axpy(-lr, gt, t);
            }
            if !self.params.is_finite() {
                return Err(GatError::Diverged { epoch });
            }
        }
        Ok(trace)
    }

    /// Parameter file; `builder` carries the standardization statistics.
    pub fn to_json(&self, builder: Option<&BatchBuilder>) -> Vec<u8> {
        let file = ParamFile {
            version: PARAMS_VERSION,
            config: self.config.clone(),
            tensors: self.params.clone(),
            batch_builder: builder.cloned(),
        };
        serde_json::to_vec(&file).expect("parameters serialize")
    }

    pub fn from_json(bytes: &[u8]) -> Result<(Self, Option<BatchBuilder>), GatError> {
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| GatError::Corrupt(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == PARAMS_VERSION as u64 => {}
            Some(v) => return Err(GatError::Version(v)),
            None => return Err(GatError::Corrupt("missing version".into())),
        }
        let file: ParamFile = serde_json::from_value(value).map_err(|e| GatError::Corrupt(e.to_string()))?;
        if !file.tensors.is_finite() {
            return Err(GatError::Corrupt("non-finite parameter".into()));
        }
        Ok((Gat::with_parameters(file.config, file.tensors)?, file.batch_builder))
    }
}

/// Every airport named by `records`.
pub fn airports_of(records: &[FlightRecord]) -> BTreeSet<String> {
    records.iter().flat_map(|r| [r.origin.clone(), r.destination.clone()]).collect()
}
