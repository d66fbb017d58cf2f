//! Second-order gradient-boosted regression trees.
//!
//! Each round fits a depth-limited tree to the loss gradients with an exact
//! greedy split search over presorted feature columns. Leaves take the Newton
//! step `-G / (H + lambda)`. Classification minimizes class-weighted log loss
//! on the log-odds scale; regression minimizes squared error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::par::{map_indexed, Execution};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum GbdtError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("row has {got} features, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("feature columns do not match the model's registry")]
    FeatureMismatch,
    #[error("model has no splits to attribute importance to")]
    Untrained,
    #[error("unsupported model version {0}")]
    Version(u64),
    #[error("corrupt model payload: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// Weight of each positive sample; `None` means `N_neg / N_pos`.
    pub class_weight_positive: Option<f64>,
    pub lambda_l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 200,
            max_depth: 6,
            learning_rate: 0.1,
            min_samples_leaf: 20,
            class_weight_positive: None,
            lambda_l2: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: &str| Err(GbdtError::Config(m.to_string()));
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.min_samples_leaf < 1 {
            return bad("min_samples_leaf must be >= 1");
        }
        if !(self.lambda_l2 >= 0.0 && self.lambda_l2.is_finite()) {
            return bad("lambda_l2 must be finite and non-negative");
        }
        if let Some(w) = self.class_weight_positive {
            if !(w > 0.0 && w.is_finite()) {
                return bad("class_weight_positive must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature_index: usize,
        threshold: f64,
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
    },
}

impl TreeNode {
    /// `x[feature] < threshold` goes left.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split { feature_index, threshold, left, right, .. } => {
                    node = if x[*feature_index] < *threshold { left } else { right };
                }
            }
        }
    }

    fn add_gains(&self, acc: &mut [f64]) {
        if let TreeNode::Split { feature_index, gain, left, right, .. } = self {
            acc[*feature_index] += gain;
            left.add_gains(acc);
            right.add_gains(acc);
        }
    }

    /// Every `(feature, threshold)` used by this tree.
    pub fn splits(&self, out: &mut Vec<(usize, f64)>) {
        if let TreeNode::Split { feature_index, threshold, left, right, .. } = self {
            out.push((*feature_index, *threshold));
            left.splits(out);
            right.splits(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub version: u32,
    pub task: Task,
    pub base_score: f64,
    pub learning_rate: f64,
    pub feature_names: Vec<String>,
    pub trees: Vec<TreeNode>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl GbdtModel {
    /// Untransformed ensemble output: log-odds or raw regression value.
    pub fn predict_raw(&self, x: &[f64]) -> Result<f64, GbdtError> {
        if x.len() != self.feature_names.len() {
            return Err(GbdtError::Dimension { expected: self.feature_names.len(), got: x.len() });
        }
        Ok(self.raw_unchecked(x))
    }

    fn raw_unchecked(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.evaluate(x)).sum::<f64>()
    }

    /// Holding probability, or predicted delay clamped at zero.
    pub fn predict(&self, x: &[f64]) -> Result<f64, GbdtError> {
        let raw = self.predict_raw(x)?;
        Ok(self.link(raw))
    }

    fn link(&self, raw: f64) -> f64 {
        match self.task {
            Task::Classification => sigmoid(raw),
            Task::Regression => raw.max(0.0),
        }
    }

    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>, GbdtError> {
        if x.names() != self.feature_names.as_slice() {
            return Err(GbdtError::FeatureMismatch);
        }
        Ok(map_indexed(Execution::default(), x.n_rows(), |i| self.link(self.raw_unchecked(x.row(i)))))
    }

    /// Total split gain per feature, normalized to sum to one.
    pub fn feature_importance(&self) -> Result<BTreeMap<String, f64>, GbdtError> {
        let mut gains = vec![0.0; self.feature_names.len()];
        for t in &self.trees {
            t.add_gains(&mut gains);
        }
        let total: f64 = gains.iter().sum();
        if self.trees.is_empty() || total <= 0.0 {
            return Err(GbdtError::Untrained);
        }
        Ok(self.feature_names.iter().cloned().zip(gains.into_iter().map(|g| g / total)).collect())
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("model serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, GbdtError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| GbdtError::Corrupt(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => return Err(GbdtError::Version(v)),
            None => return Err(GbdtError::Corrupt("missing version".into())),
        }
        serde_json::from_value(value).map_err(|e| GbdtError::Corrupt(e.to_string()))
    }
}

/// A trained model and its training loss before round 1 and after each round.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: GbdtModel,
    pub loss_trace: Vec<f64>,
}

pub fn train_classifier(x: &FeatureMatrix, cfg: &TrainConfig) -> Result<GbdtModel, GbdtError> {
    Ok(train_traced(x, Task::Classification, cfg, Execution::default())?.model)
}

pub fn train_regressor(x: &FeatureMatrix, cfg: &TrainConfig) -> Result<GbdtModel, GbdtError> {
    Ok(train_traced(x, Task::Regression, cfg, Execution::default())?.model)
}

/// Weighted log loss (classification) or mean squared error (regression).
fn training_loss(task: Task, raw: &[f64], y: &[f64], w: &[f64]) -> f64 {
    match task {
        Task::Classification => {
            let mut num = 0.0;
            let mut den = 0.0;
            for ((&f, &t), &wi) in raw.iter().zip(y).zip(w) {
                // log(1 + e^f) - t f, stable for large |f|
                let softplus = if f > 0.0 { f + (-f).exp().ln_1p() } else { f.exp().ln_1p() };
                num += wi * (softplus - t * f);
                den += wi;
            }
            num / den
        }
        Task::Regression => {
            raw.iter().zip(y).map(|(f, t)| (f - t).powi(2)).sum::<f64>() / raw.len() as f64
        }
    }
}

pub fn train_traced(
    x: &FeatureMatrix,
    task: Task,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutput, GbdtError> {
    cfg.validate()?;
    let n = x.n_rows();
    if n < 2 {
        return Err(GbdtError::TooFewRows { needed: 2, got: n });
    }
    let (y, w, base_score) = match task {
        Task::Classification => {
            let pos = x.labels_cls().iter().filter(|&&b| b).count();
            if pos == 0 || pos == n {
                return Err(GbdtError::SingleClass);
            }
            let cw = cfg.class_weight_positive.unwrap_or((n - pos) as f64 / pos as f64);
            let y: Vec<f64> = x.labels_cls().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let w: Vec<f64> = x.labels_cls().iter().map(|&b| if b { cw } else { 1.0 }).collect();
            let wp = cw * pos as f64;
            let rate = wp / (wp + (n - pos) as f64);
            (y, w, (rate / (1.0 - rate)).ln())
        }
        Task::Regression => {
            let y = x.labels_reg().to_vec();
            let mean = y.iter().sum::<f64>() / n as f64;
            (y, vec![1.0; n], mean)
        }
    };

    let sorted = presort(x, exec);
    let mut raw = vec![base_score; n];
    let mut trees = Vec::with_capacity(cfg.rounds);
    let mut loss_trace = vec![training_loss(task, &raw, &y, &w)];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..cfg.rounds {
        for i in 0..n {
            match task {
                Task::Classification => {
                    let p = sigmoid(raw[i]);
                    grad[i] = w[i] * (p - y[i]);
                    hess[i] = w[i] * p * (1.0 - p);
                }
                Task::Regression => {
                    grad[i] = raw[i] - y[i];
                    hess[i] = 1.0;
                }
            }
        }
        let builder = TreeBuilder { x, grad: &grad, hess: &hess, cfg, exec };
        let tree = builder.build(sorted.clone(), 0);
        for (i, r) in raw.iter_mut().enumerate() {
            *r += cfg.learning_rate * tree.evaluate(x.row(i));
        }
        loss_trace.push(training_loss(task, &raw, &y, &w));
        trees.push(tree);
    }
    let model = GbdtModel {
        version: MODEL_VERSION,
        task,
        base_score,
        learning_rate: cfg.learning_rate,
        feature_names: x.names().to_vec(),
        trees,
    };
    Ok(TrainOutput { model, loss_trace })
}

/// Row indices of every feature column in ascending value order (ties by
/// row index).
fn presort(x: &FeatureMatrix, exec: Execution) -> Vec<Vec<u32>> {
    map_indexed(exec, x.n_cols(), |j| {
        let mut idx: Vec<u32> = (0..x.n_rows() as u32).collect();
        idx.sort_by(|&a, &b| x.get(a as usize, j).total_cmp(&x.get(b as usize, j)).then(a.cmp(&b)));
        idx
    })
}

struct TreeBuilder<'a> {
    x: &'a FeatureMatrix,
    grad: &'a [f64],
    hess: &'a [f64],
    cfg: &'a TrainConfig,
    exec: Execution,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.cfg.lambda_l2)
    }

    fn leaf(&self, g: f64, h: f64) -> TreeNode {
        TreeNode::Leaf { value: -g / (h + self.cfg.lambda_l2) }
    }

    /// `sorted[j]` holds this node's rows in feature-`j` order.
    fn build(&self, sorted: Vec<Vec<u32>>, depth: usize) -> TreeNode {
        let rows = &sorted[0];
        let g: f64 = rows.iter().map(|&i| self.grad[i as usize]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i as usize]).sum();
        let min_leaf = self.cfg.min_samples_leaf;
        if depth >= self.cfg.max_depth || rows.len() < 2 * min_leaf {
            return self.leaf(g, h);
        }
        let parent = self.score(g, h);
        let per_feature = map_indexed(self.exec, sorted.len(), |j| self.best_for_feature(j, &sorted[j], g, h, parent));
        // Sequential reduction: the lowest feature index wins ties.
        let mut best: Option<Candidate> = None;
        for c in per_feature.into_iter().flatten() {
            if best.is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
        let Some(best) = best else {
            return self.leaf(g, h);
        };

        let mut goes_left = vec![false; self.x.n_rows()];
        for &i in rows {
            goes_left[i as usize] = self.x.get(i as usize, best.feature) < best.threshold;
        }
        let (left, right): (Vec<Vec<u32>>, Vec<Vec<u32>>) = sorted
            .into_iter()
            .map(|col| col.into_iter().partition(|&i| goes_left[i as usize]))
            .unzip();
        TreeNode::Split {
            feature_index: best.feature,
            threshold: best.threshold,
            gain: best.gain,
            left: Box::new(self.build(left, depth + 1)),
            right: Box::new(self.build(right, depth + 1)),
        }
    }

    /// Best split on one feature; the lowest threshold wins ties.
    fn best_for_feature(&self, j: usize, order: &[u32], g: f64, h: f64, parent: f64) -> Option<Candidate> {
        let n = order.len();
        let min_leaf = self.cfg.min_samples_leaf;
        let mut gl = 0.0;
        let mut hl = 0.0;
        let mut best: Option<Candidate> = None;
        for k in 0..n - 1 {
            let i = order[k] as usize;
            gl += self.grad[i];
            hl += self.hess[i];
            let left_n = k + 1;
            if left_n < min_leaf {
                continue;
            }
            if n - left_n < min_leaf {
                break;
            }
            let a = self.x.get(i, j);
            let b = self.x.get(order[k + 1] as usize, j);
            if a == b {
                continue;
            }
            let gain = 0.5 * (self.score(gl, hl) + self.score(g - gl, h - hl) - parent);
            if gain > 0.0 && best.is_none_or(|c| gain > c.gain) {
                let mut threshold = a + (b - a) / 2.0;
                if threshold <= a {
                    threshold = b;
                }
                best = Some(Candidate { gain, feature: j, threshold });
            }
        }
        best
    }
}
