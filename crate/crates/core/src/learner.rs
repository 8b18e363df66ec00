//! Gradient-boosted decision trees for binary classification over sparse
//! rows.
//!
//! Each round fits a regression tree to the gradient and hessian of the
//! weighted logistic loss. Splits are exact and greedy, searched level by
//! level over the sorted non-zero values of every feature. A zero and an
//! absent entry are the same thing: both follow the split's learned default
//! direction. Leaf values take a Newton step scaled by the learning rate and
//! are halved until the leaf's loss does not go up, so the training loss never
//! increases from one round to the next.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{FeatureGroup, FeatureRow, FeatureVocabulary, SparseVector};
use crate::eval;

/// Bumped whenever the serialized layout changes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

const MIN_SPLIT_GAIN: f64 = 1e-10;
const MAX_HALVINGS: u32 = 30;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("degenerate labels: need at least one positive and one negative row")]
    DegenerateLabels,
    #[error("row {row} has no label")]
    MissingLabel { row: usize },
    #[error("row {row}: non-finite value for feature {feature}")]
    NonFiniteFeature { row: usize, feature: u32 },
    #[error("row {row}: feature {feature} outside the feature space of size {dim}")]
    FeatureOutOfRange { row: usize, feature: u32, dim: usize },
    #[error("vocabulary fingerprint mismatch: model was trained on {expected}, row uses {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("empty tuning grid")]
    EmptyGrid,
    #[error("invalid learner config: {0}")]
    InvalidConfig(String),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
    #[error("model format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, LearnError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_weight: f64,
    pub l2_reg: f64,
    pub positive_class_weight: f64,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            max_depth: 6,
            learning_rate: 0.1,
            min_child_weight: 1.0,
            l2_reg: 1.0,
            positive_class_weight: 1.0,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.min_child_weight >= 0.0) || !(self.l2_reg >= 0.0) {
            return bad("min_child_weight and l2_reg must be non-negative");
        }
        if !(self.positive_class_weight > 0.0 && self.positive_class_weight.is_finite()) {
            return bad("positive_class_weight must be positive");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Small grid searched by [`tune`]: trees {100, 200}, depth {4, 6}, learning
/// rate {0.05, 0.1}, positive weight {1, 1/base_rate}.
pub fn default_grid(base_rate: f64, seed: u64) -> Vec<LearnerConfig> {
    let mut weights = vec![1.0];
    if base_rate > 0.0 && base_rate < 1.0 {
        weights.push(1.0 / base_rate);
    }
    let mut grid = Vec::new();
    for n_trees in [100, 200] {
        for max_depth in [4, 6] {
            for learning_rate in [0.05, 0.1] {
                for &positive_class_weight in &weights {
                    grid.push(LearnerConfig {
                        n_trees,
                        max_depth,
                        learning_rate,
                        positive_class_weight,
                        seed,
                        ..LearnerConfig::default()
                    });
                }
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: u32,
        /// Non-zero values strictly below go left.
        threshold: f64,
        /// Direction for zero or absent values.
        default_left: bool,
        left: u32,
        right: u32,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_index(&self, features: &SparseVector) -> usize {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { .. } => return idx,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                    ..
                } => {
                    let v = features.get(*feature);
                    let go_left = if v == 0.0 { *default_left } else { v < *threshold };
                    idx = if go_left { *left } else { *right } as usize;
                }
            }
        }
    }

    pub fn predict(&self, features: &SparseVector) -> f64 {
        match &self.nodes[self.leaf_index(features)] {
            Node::Leaf { value } => *value,
            Node::Split { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Size and identity of the feature space a model is trained on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpace {
    pub dim: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub version: u32,
    pub config: LearnerConfig,
    pub base_logit: f64,
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub vocab_fingerprint: String,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `-[y ln p + (1-y) ln(1-p)]` for `p = sigmoid(margin)`.
fn logistic_loss(margin: f64, label: bool) -> f64 {
    let z = if label { -margin } else { margin };
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Model {
    pub fn margin(&self, features: &SparseVector) -> f64 {
        self.base_logit + self.trees.iter().map(|t| t.predict(features)).sum::<f64>()
    }

    /// Failure probability, no fingerprint check.
    pub fn score(&self, features: &SparseVector) -> f64 {
        sigmoid(self.margin(features))
    }

    /// The model after its first `n_trees` rounds.
    pub fn truncated(&self, n_trees: usize) -> Model {
        let n = n_trees.min(self.trees.len());
        Model {
            config: LearnerConfig {
                n_trees: n,
                ..self.config.clone()
            },
            trees: self.trees[..n].to_vec(),
            ..self.clone()
        }
    }

    pub fn check_fingerprint(&self, fingerprint: &str) -> Result<()> {
        if self.vocab_fingerprint == fingerprint {
            Ok(())
        } else {
            Err(LearnError::FingerprintMismatch {
                expected: self.vocab_fingerprint.clone(),
                found: fingerprint.to_string(),
            })
        }
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("model serializes")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| LearnError::Format(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| LearnError::Format("missing version".into()))?;
        if version != u64::from(MODEL_FORMAT_VERSION) {
            return Err(LearnError::UnsupportedVersion(version as u32));
        }
        serde_json::from_value(value).map_err(|e| LearnError::Format(e.to_string()))
    }
}

/// Failure probability of a row whose layout has the given fingerprint.
pub fn predict(model: &Model, row: &FeatureRow, fingerprint: &str) -> Result<f64> {
    model.check_fingerprint(fingerprint)?;
    Ok(model.score(&row.features))
}

/// Exact histogram bins: one bin per distinct non-zero value of a feature,
/// plus the bins of every row in row-major order.
struct Bins {
    /// Bins of feature `f` are `feature_offsets[f]..feature_offsets[f + 1]`,
    /// in increasing value order.
    feature_offsets: Vec<usize>,
    values: Vec<f64>,
    row_offsets: Vec<usize>,
    row_bins: Vec<u32>,
}

impl Bins {
    fn build(rows: &[&FeatureRow], dim: usize) -> Self {
        let mut per_feature: Vec<Vec<f64>> = vec![Vec::new(); dim];
        for row in rows {
            for (f, v) in row.features.iter() {
                if v != 0.0 {
                    per_feature[f as usize].push(v);
                }
            }
        }
        let mut feature_offsets = Vec::with_capacity(dim + 1);
        let mut values = Vec::new();
        feature_offsets.push(0);
        for vals in &mut per_feature {
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            values.extend_from_slice(vals);
            feature_offsets.push(values.len());
        }
        let mut row_offsets = Vec::with_capacity(rows.len() + 1);
        let mut row_bins = Vec::new();
        row_offsets.push(0);
        for row in rows {
            for (f, v) in row.features.iter() {
                if v != 0.0 {
                    let f = f as usize;
                    let local = per_feature[f]
                        .binary_search_by(|x| x.total_cmp(&v))
                        .expect("value was collected above");
                    row_bins.push((feature_offsets[f] + local) as u32);
                }
            }
            row_offsets.push(row_bins.len());
        }
        Self {
            feature_offsets,
            values,
            row_offsets,
            row_bins,
        }
    }

    fn n_bins(&self) -> usize {
        self.values.len()
    }

    fn n_features(&self) -> usize {
        self.feature_offsets.len() - 1
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BinStat {
    g: f64,
    h: f64,
    n: u32,
}

fn build_histogram(bins: &Bins, members: &[u32], grad: &[f64], hess: &[f64], hist: &mut Vec<BinStat>) {
    hist.clear();
    hist.resize(bins.n_bins(), BinStat::default());
    for &r in members {
        let r = r as usize;
        let (g, h) = (grad[r], hess[r]);
        for &b in &bins.row_bins[bins.row_offsets[r]..bins.row_offsets[r + 1]] {
            let s = &mut hist[b as usize];
            s.g += g;
            s.h += h;
            s.n += 1;
        }
    }
}

/// Histogram budget for keeping parent histograms around, in bytes.
const HISTOGRAM_MEMORY_LIMIT: usize = 512 << 20;

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: u32,
    threshold: f64,
    default_left: bool,
}

struct GrowParams {
    lambda: f64,
    min_child_weight: f64,
    max_depth: usize,
}

fn split_gain(gl: f64, hl: f64, g: f64, h: f64, p: &GrowParams) -> Option<f64> {
    let (gr, hr) = (g - gl, h - hl);
    if hl < p.min_child_weight || hr < p.min_child_weight || hl <= 0.0 || hr <= 0.0 {
        return None;
    }
    let score = |g: f64, h: f64| g * g / (h + p.lambda);
    let gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(g, h));
    (gain > MIN_SPLIT_GAIN).then_some(gain)
}

/// Best split of one node. Features are scanned in id order and thresholds
/// in value order; a later candidate must be strictly better to win.
fn best_split(bins: &Bins, hist: &[BinStat], g: f64, h: f64, params: &GrowParams) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    let mut offer = |c: Candidate| {
        if best.is_none_or(|b| c.gain > b.gain) {
            best = Some(c);
        }
    };
    for f in 0..bins.n_features() {
        let range = bins.feature_offsets[f]..bins.feature_offsets[f + 1];
        let (mut g_nz, mut h_nz) = (0.0, 0.0);
        let mut first = None;
        for b in range.clone() {
            let s = hist[b];
            if s.n > 0 {
                g_nz += s.g;
                h_nz += s.h;
                first.get_or_insert(b);
            }
        }
        let Some(first) = first else { continue };
        let (g_zero, h_zero) = (g - g_nz, h - h_nz);
        // zeros on the left, every non-zero value on the right
        if let Some(gain) = split_gain(g_zero, h_zero, g, h, params) {
            offer(Candidate {
                gain,
                feature: f as u32,
                threshold: bins.values[first],
                default_left: true,
            });
        }
        let (mut g_acc, mut h_acc) = (0.0, 0.0);
        let mut last: Option<f64> = None;
        for b in range {
            let s = hist[b];
            if s.n == 0 {
                continue;
            }
            let v = bins.values[b];
            if let Some(last) = last {
                let threshold = last + (v - last) / 2.0;
                for default_left in [true, false] {
                    let (gl, hl) = if default_left {
                        (g_acc + g_zero, h_acc + h_zero)
                    } else {
                        (g_acc, h_acc)
                    };
                    if let Some(gain) = split_gain(gl, hl, g, h, params) {
                        offer(Candidate {
                            gain,
                            feature: f as u32,
                            threshold,
                            default_left,
                        });
                    }
                }
            }
            g_acc += s.g;
            h_acc += s.h;
            last = Some(v);
        }
    }
    best
}

struct OpenNode {
    node: usize,
    members: Vec<u32>,
    g: f64,
    h: f64,
    hist: Option<Vec<BinStat>>,
}

fn goes_left(value: f64, threshold: f64, default_left: bool) -> bool {
    if value == 0.0 {
        default_left
    } else {
        value < threshold
    }
}

/// Grows one tree structure on the sampled rows, level by level. The smaller
/// child of every split gets a fresh histogram and the larger one inherits
/// its parent's minus the sibling's. Leaves carry placeholder values; the
/// caller assigns them.
fn grow_tree(
    bins: &Bins,
    rows: &[&FeatureRow],
    grad: &[f64],
    hess: &[f64],
    in_sample: &[bool],
    params: &GrowParams,
) -> Tree {
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let members: Vec<u32> = (0..rows.len() as u32).filter(|&r| in_sample[r as usize]).collect();
    let (g, h) = members
        .iter()
        .fold((0.0, 0.0), |(g, h), &r| (g + grad[r as usize], h + hess[r as usize]));
    let mut level = vec![OpenNode {
        node: 0,
        members,
        g,
        h,
        hist: None,
    }];
    let mut scratch: Vec<BinStat> = Vec::new();
    let hist_bytes = bins.n_bins() * std::mem::size_of::<BinStat>();

    for depth in 0..params.max_depth {
        if level.is_empty() {
            break;
        }
        let keep_hists = depth + 1 < params.max_depth
            && hist_bytes.saturating_mul(level.len() * 2) <= HISTOGRAM_MEMORY_LIMIT;
        let mut next = Vec::new();
        for open in level {
            let hist: &[BinStat] = match &open.hist {
                Some(hist) => hist,
                None => {
                    build_histogram(bins, &open.members, grad, hess, &mut scratch);
                    &scratch
                }
            };
            let Some(c) = best_split(bins, hist, open.g, open.h, params) else {
                continue;
            };
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for &r in &open.members {
                if goes_left(rows[r as usize].features.get(c.feature), c.threshold, c.default_left) {
                    left.push(r);
                } else {
                    right.push(r);
                }
            }
            let sums = |m: &[u32]| {
                m.iter()
                    .fold((0.0, 0.0), |(g, h), &r| (g + grad[r as usize], h + hess[r as usize]))
            };
            let (gl, hl) = sums(&left);
            let (gr, hr) = sums(&right);
            let (left_hist, right_hist) = if keep_hists {
                let left_is_small = left.len() <= right.len();
                let mut small = Vec::new();
                build_histogram(bins, if left_is_small { &left } else { &right }, grad, hess, &mut small);
                let large: Vec<BinStat> = hist
                    .iter()
                    .zip(&small)
                    .map(|(p, s)| BinStat {
                        g: p.g - s.g,
                        h: p.h - s.h,
                        n: p.n - s.n,
                    })
                    .collect();
                if left_is_small {
                    (Some(small), Some(large))
                } else {
                    (Some(large), Some(small))
                }
            } else {
                (None, None)
            };
            let l = nodes.len();
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[open.node] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                default_left: c.default_left,
                left: l as u32,
                right: l as u32 + 1,
                gain: c.gain,
            };
            next.push(OpenNode {
                node: l,
                members: left,
                g: gl,
                h: hl,
                hist: left_hist,
            });
            next.push(OpenNode {
                node: l + 1,
                members: right,
                g: gr,
                h: hr,
                hist: right_hist,
            });
        }
        level = next;
    }
    Tree { nodes }
}

fn normalized_order(rows: &[FeatureRow]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&rows[a], &rows[b]);
        ra.key
            .cmp(&rb.key)
            .then_with(|| ra.test_id.cmp(&rb.test_id))
            .then_with(|| ra.label.cmp(&rb.label))
            .then_with(|| {
                let bits = |r: &FeatureRow| r.features.iter().map(|(k, v)| (k, v.to_bits())).collect::<Vec<_>>();
                bits(ra).cmp(&bits(rb))
            })
    });
    order
}

/// A fitted model plus the weighted training loss after every round
/// (index 0 is the prior-only model).
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub model: Model,
    pub loss_per_round: Vec<f64>,
}

pub fn fit(rows: &[FeatureRow], space: &FeatureSpace, config: &LearnerConfig) -> Result<Model> {
    fit_with_trace(rows, space, config).map(|t| t.model)
}

pub fn fit_with_trace(rows: &[FeatureRow], space: &FeatureSpace, config: &LearnerConfig) -> Result<FitTrace> {
    config.validate()?;
    for (i, row) in rows.iter().enumerate() {
        if row.label.is_none() {
            return Err(LearnError::MissingLabel { row: i });
        }
        for (f, v) in row.features.iter() {
            if !v.is_finite() {
                return Err(LearnError::NonFiniteFeature { row: i, feature: f });
            }
            if f as usize >= space.dim {
                return Err(LearnError::FeatureOutOfRange {
                    row: i,
                    feature: f,
                    dim: space.dim,
                });
            }
        }
    }
    let order = normalized_order(rows);
    let rows: Vec<&FeatureRow> = order.iter().map(|&i| &rows[i]).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.label == Some(1)).collect();
    let weights: Vec<f64> = labels
        .iter()
        .map(|&y| if y { config.positive_class_weight } else { 1.0 })
        .collect();
    let w_pos: f64 = labels.iter().zip(&weights).filter(|(y, _)| **y).map(|(_, w)| w).sum();
    let w_neg: f64 = labels.iter().zip(&weights).filter(|(y, _)| !**y).map(|(_, w)| w).sum();
    if w_pos == 0.0 || w_neg == 0.0 {
        return Err(LearnError::DegenerateLabels);
    }
    let base_logit = (w_pos / w_neg).ln();
    let n = rows.len();
    let mut margins = vec![base_logit; n];
    let total_loss = |margins: &[f64]| -> f64 {
        margins
            .iter()
            .zip(&labels)
            .zip(&weights)
            .map(|((m, y), w)| w * logistic_loss(*m, *y))
            .sum()
    };
    let mut losses = vec![total_loss(&margins)];

    let bins = Bins::build(&rows, space.dim);
    let params = GrowParams {
        lambda: config.l2_reg,
        min_child_weight: config.min_child_weight,
        max_depth: config.max_depth,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(config.n_trees);

    for _round in 0..config.n_trees {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            let y = if labels[i] { 1.0 } else { 0.0 };
            grad[i] = weights[i] * (p - y);
            hess[i] = (weights[i] * p * (1.0 - p)).max(1e-16);
        }
        let in_sample: Vec<bool> = if config.subsample < 1.0 {
            (0..n).map(|_| rng.gen::<f64>() < config.subsample).collect()
        } else {
            vec![true; n]
        };
        let mut tree = grow_tree(&bins, &rows, &grad, &hess, &in_sample, &params);

        // Newton leaf values from the sampled rows, then a per-leaf
        // backtracking search over all rows routed to the leaf.
        let leaf_of: Vec<usize> = rows.iter().map(|r| tree.leaf_index(&r.features)).collect();
        let n_nodes = tree.nodes.len();
        let mut g_leaf = vec![0.0; n_nodes];
        let mut h_leaf = vec![0.0; n_nodes];
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for i in 0..n {
            members[leaf_of[i]].push(i);
            if in_sample[i] {
                g_leaf[leaf_of[i]] += grad[i];
                h_leaf[leaf_of[i]] += hess[i];
            }
        }
        for (idx, node) in tree.nodes.iter_mut().enumerate() {
            let Node::Leaf { value } = node else { continue };
            let rows_here = &members[idx];
            let mut step = -config.learning_rate * g_leaf[idx] / (h_leaf[idx] + config.l2_reg);
            if rows_here.is_empty() || !step.is_finite() {
                *value = 0.0;
                continue;
            }
            let leaf_loss = |delta: f64| -> f64 {
                rows_here
                    .iter()
                    .map(|&i| weights[i] * logistic_loss(margins[i] + delta, labels[i]))
                    .sum()
            };
            let before = leaf_loss(0.0);
            let mut halvings = 0;
            while leaf_loss(step) > before {
                step /= 2.0;
                halvings += 1;
                if halvings >= MAX_HALVINGS {
                    step = 0.0;
                    break;
                }
            }
            *value = step;
        }
        for i in 0..n {
            if let Node::Leaf { value } = tree.nodes[leaf_of[i]] {
                margins[i] += value;
            }
        }
        losses.push(total_loss(&margins));
        trees.push(tree);
    }

    Ok(FitTrace {
        model: Model {
            version: MODEL_FORMAT_VERSION,
            config: config.clone(),
            base_logit,
            trees,
            n_features: space.dim,
            vocab_fingerprint: space.fingerprint.clone(),
        },
        loss_per_round: losses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub config: LearnerConfig,
    pub val_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub best_config: LearnerConfig,
    pub best_model: Model,
    pub results: Vec<TuneResult>,
}

fn better(a: &TuneResult, b: &TuneResult) -> bool {
    match a.val_f1.partial_cmp(&b.val_f1).unwrap_or(Ordering::Equal) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => {
            (a.config.n_trees, a.config.max_depth) < (b.config.n_trees, b.config.max_depth)
        }
    }
}

/// Fits every grid point on `train_rows` and keeps the one with the best
/// F1 on `val_rows` at threshold 0.5. Ties go to fewer trees, then lower
/// depth, then grid order.
pub fn tune(
    train_rows: &[FeatureRow],
    val_rows: &[FeatureRow],
    grid: &[LearnerConfig],
    space: &FeatureSpace,
) -> Result<TuneOutcome> {
    if grid.is_empty() {
        return Err(LearnError::EmptyGrid);
    }
    let val_labels: Vec<bool> = val_rows.iter().map(|r| r.label == Some(1)).collect();
    // Boosting is sequential, so a smaller ensemble is a prefix of a larger
    // one with otherwise equal settings: fit each shape once at its largest size.
    let shape = |c: &LearnerConfig| LearnerConfig {
        n_trees: 0,
        ..c.clone()
    };
    let mut fitted: Vec<(LearnerConfig, Model)> = Vec::new();
    let mut best: Option<(TuneResult, Model)> = None;
    let mut results = Vec::with_capacity(grid.len());
    for config in grid {
        let key = shape(config);
        let full = match fitted.iter().find(|(k, _)| *k == key) {
            Some((_, m)) => m,
            None => {
                let largest = grid
                    .iter()
                    .filter(|c| shape(c) == key)
                    .map(|c| c.n_trees)
                    .max()
                    .unwrap_or(config.n_trees);
                let model = fit(train_rows, space, &LearnerConfig {
                    n_trees: largest,
                    ..config.clone()
                })?;
                fitted.push((key, model));
                &fitted.last().expect("just pushed").1
            }
        };
        let model = full.truncated(config.n_trees);
        let val_f1 = if val_rows.is_empty() {
            0.0
        } else {
            let scores: Vec<f64> = val_rows.iter().map(|r| model.score(&r.features)).collect();
            eval::confusion_metrics(&scores, &val_labels, 0.5)
                .map(|m| m.f1)
                .unwrap_or(0.0)
        };
        tracing::debug!(?config, val_f1, "grid point");
        let result = TuneResult {
            config: config.clone(),
            val_f1,
        };
        let replace = match &best {
            None => true,
            Some((b, _)) => better(&result, b),
        };
        if replace {
            best = Some((result.clone(), model));
        }
        results.push(result);
    }
    let (best_result, best_model) = best.expect("grid is non-empty");
    Ok(TuneOutcome {
        best_config: best_result.config,
        best_model,
        results,
    })
}

/// Total split gain per feature; features never split on are absent.
pub fn feature_importance(model: &Model) -> std::collections::BTreeMap<u32, f64> {
    let mut out = std::collections::BTreeMap::new();
    for tree in &model.trees {
        for node in &tree.nodes {
            if let Node::Split { feature, gain, .. } = node {
                *out.entry(*feature).or_insert(0.0) += gain;
            }
        }
    }
    out
}

/// Mean total gain per split feature within each semantic group.
pub fn group_importance(
    importance: &std::collections::BTreeMap<u32, f64>,
    vocab: &FeatureVocabulary,
) -> std::collections::BTreeMap<FeatureGroup, f64> {
    let mut sums: std::collections::BTreeMap<FeatureGroup, (f64, usize)> = std::collections::BTreeMap::new();
    for (&feature, &gain) in importance {
        if let Some(group) = vocab.group_of(feature as usize) {
            let e = sums.entry(group).or_insert((0.0, 0));
            e.0 += gain;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(g, (s, n))| (g, s / n as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(dim: usize) -> FeatureSpace {
        FeatureSpace {
            dim,
            fingerprint: "fp".into(),
        }
    }

    fn row(i: usize, feats: &[(u32, f64)], label: u8) -> FeatureRow {
        FeatureRow {
            key: format!("k{i:05}"),
            test_id: "t".into(),
            features: SparseVector::from_pairs(feats.iter().copied()),
            label: Some(label),
        }
    }

    /// 500 rows over 10 features, label = 1 iff feature 7 is positive.
    pub(crate) fn separable_rows() -> Vec<FeatureRow> {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        (0..500)
            .map(|i| {
                let mut feats = Vec::new();
                for f in 0..10u32 {
                    if rng.gen_bool(0.4) {
                        feats.push((f, f64::from(rng.gen_range(1..20))));
                    }
                }
                let label = u8::from(feats.iter().any(|(f, _)| *f == 7));
                row(i, &feats, label)
            })
            .collect()
    }

    #[test]
    fn separable_data_fits_perfectly() {
        let rows = separable_rows();
        let model = fit(&rows, &space(10), &LearnerConfig::default()).unwrap();
        let scores: Vec<f64> = rows.iter().map(|r| model.score(&r.features)).collect();
        let labels: Vec<bool> = rows.iter().map(|r| r.label == Some(1)).collect();
        let m = eval::confusion_metrics(&scores, &labels, 0.5).unwrap();
        assert_eq!(m.f1, 1.0);
        let min_pos = scores.iter().zip(&labels).filter(|(_, y)| **y).map(|(s, _)| *s).fold(1.0, f64::min);
        let max_neg = scores.iter().zip(&labels).filter(|(_, y)| !**y).map(|(s, _)| *s).fold(0.0, f64::max);
        assert!(min_pos > max_neg);
        let imp = feature_importance(&model);
        let total: f64 = imp.values().sum();
        assert!(imp[&7] / total >= 0.99, "{imp:?}");
    }

    #[test]
    fn zero_trees_is_the_weighted_prior() {
        let rows = separable_rows();
        let cfg = LearnerConfig {
            n_trees: 0,
            positive_class_weight: 3.0,
            ..LearnerConfig::default()
        };
        let model = fit(&rows, &space(10), &cfg).unwrap();
        let n_pos = rows.iter().filter(|r| r.label == Some(1)).count() as f64;
        let n_neg = rows.len() as f64 - n_pos;
        let expected = 3.0 * n_pos / (3.0 * n_pos + n_neg);
        for r in &rows {
            assert!((model.score(&r.features) - expected).abs() < 1e-12);
        }
        assert!(feature_importance(&model).is_empty());
    }

    #[test]
    fn constant_zero_logit_scores_half() {
        let model = Model {
            version: MODEL_FORMAT_VERSION,
            config: LearnerConfig::default(),
            base_logit: 0.0,
            trees: vec![],
            n_features: 1,
            vocab_fingerprint: "fp".into(),
        };
        let r = row(0, &[(0, 5.0)], 0);
        assert_eq!(predict(&model, &r, "fp").unwrap(), 0.5);
        assert!(matches!(
            predict(&model, &r, "other"),
            Err(LearnError::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn scores_strictly_inside_unit_interval() {
        let model = fit(&separable_rows(), &space(10), &LearnerConfig::default()).unwrap();
        for r in separable_rows() {
            let s = model.score(&r.features);
            assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let same = vec![row(0, &[(0, 1.0)], 1), row(1, &[(0, 2.0)], 1)];
        assert!(matches!(
            fit(&same, &space(1), &LearnerConfig::default()),
            Err(LearnError::DegenerateLabels)
        ));
        let nan = vec![row(0, &[(0, f64::NAN)], 1), row(1, &[(0, 2.0)], 0)];
        assert!(matches!(
            fit(&nan, &space(1), &LearnerConfig::default()),
            Err(LearnError::NonFiniteFeature { .. })
        ));
        let wide = vec![row(0, &[(4, 1.0)], 1), row(1, &[(0, 2.0)], 0)];
        assert!(matches!(
            fit(&wide, &space(2), &LearnerConfig::default()),
            Err(LearnError::FeatureOutOfRange { .. })
        ));
        let bad_cfg = LearnerConfig {
            learning_rate: 0.0,
            ..LearnerConfig::default()
        };
        assert!(matches!(
            fit(&wide, &space(5), &bad_cfg),
            Err(LearnError::InvalidConfig(_))
        ));
    }

    #[test]
    fn deterministic_and_order_independent() {
        let rows = separable_rows();
        let cfg = LearnerConfig {
            n_trees: 20,
            subsample: 0.7,
            seed: 9,
            ..LearnerConfig::default()
        };
        let a = fit(&rows, &space(10), &cfg).unwrap().to_json();
        let mut reversed = rows.clone();
        reversed.reverse();
        let b = fit(&reversed, &space(10), &cfg).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn depth_bounded_and_splits_in_range() {
        let cfg = LearnerConfig {
            n_trees: 10,
            max_depth: 2,
            ..LearnerConfig::default()
        };
        let model = fit(&separable_rows(), &space(10), &cfg).unwrap();
        for tree in &model.trees {
            assert!(tree.depth() <= 2);
            for node in &tree.nodes {
                if let Node::Split { feature, .. } = node {
                    assert!((*feature as usize) < 10);
                }
            }
        }
    }

    #[test]
    fn learns_default_direction_for_zeros() {
        // label = 1 iff feature 0 is zero or absent, never below 3 otherwise
        let rows: Vec<FeatureRow> = (0..200)
            .map(|i| {
                let noise = (1, (i % 5 + 1) as f64);
                if i % 2 == 0 {
                    row(i, &[noise], 1)
                } else {
                    row(i, &[(0, 3.0 + (i % 7) as f64), noise], 0)
                }
            })
            .collect();
        let model = fit(&rows, &space(2), &LearnerConfig::default()).unwrap();
        let zero = SparseVector::from_pairs_keep_zeros([(0, 0.0)]);
        let absent = SparseVector::default();
        assert_eq!(model.score(&zero), model.score(&absent));
        assert!(model.score(&absent) > 0.9);
        assert!(model.score(&SparseVector::from_pairs([(0, 4.0)])) < 0.1);
    }

    #[test]
    fn loss_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<FeatureRow> = (0..300)
            .map(|i| {
                let mut feats = Vec::new();
                for f in 0..5u32 {
                    if rng.gen_bool(0.5) {
                        feats.push((f, rng.gen_range(-3.0..3.0)));
                    }
                }
                row(i, &feats, u8::from(rng.gen_bool(0.3)))
            })
            .collect();
        let cfg = LearnerConfig {
            n_trees: 50,
            learning_rate: 1.0,
            l2_reg: 0.0,
            ..LearnerConfig::default()
        };
        let trace = fit_with_trace(&rows, &space(5), &cfg).unwrap();
        for w in trace.loss_per_round.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn model_json_round_trip_and_version_check() {
        let model = fit(&separable_rows(), &space(10), &LearnerConfig { n_trees: 5, ..Default::default() }).unwrap();
        let bytes = model.to_json();
        let back = Model::from_json(&bytes).unwrap();
        assert_eq!(back, model);
        let mut value: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        value["version"] = serde_json::json!(99);
        assert!(matches!(
            Model::from_json(&serde_json::to_vec(&value).unwrap()),
            Err(LearnError::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn tune_picks_best_and_breaks_ties() {
        let rows = separable_rows();
        let (train, val) = rows.split_at(400);
        let weak = LearnerConfig {
            n_trees: 0,
            ..LearnerConfig::default()
        };
        let strong = LearnerConfig {
            n_trees: 30,
            ..LearnerConfig::default()
        };
        let out = tune(train, val, &[weak.clone(), strong.clone()], &space(10)).unwrap();
        assert_eq!(out.best_config, strong);
        assert_eq!(out.results.len(), 2);

        let single = tune(train, val, std::slice::from_ref(&weak), &space(10)).unwrap();
        assert_eq!(single.best_config, weak);

        let bigger = LearnerConfig {
            n_trees: 60,
            ..LearnerConfig::default()
        };
        let tie = tune(train, val, &[bigger, strong.clone()], &space(10)).unwrap();
        assert_eq!(tie.results[0].val_f1, tie.results[1].val_f1);
        assert_eq!(tie.best_config.n_trees, 30);

        assert!(matches!(tune(train, val, &[], &space(10)), Err(LearnError::EmptyGrid)));
    }

    #[test]
    fn group_importance_averages_within_groups() {
        use crate::datamodel::FeatureGroups;
        let vocab = FeatureVocabulary::new(vec!["a/x.kt".to_string()], Vec::<String>::new(), 3, FeatureGroups::all());
        let test0 = vocab.test_offset() as u32;
        let imp: std::collections::BTreeMap<u32, f64> = [(0, 2.0), (1, 4.0), (test0, 5.0)].into_iter().collect();
        let g = group_importance(&imp, &vocab);
        assert_eq!(g[&FeatureGroup::File], 3.0);
        assert_eq!(g[&FeatureGroup::Test], 5.0);
        assert!(!g.contains_key(&FeatureGroup::Cross));
    }

    #[test]
    fn truncation_matches_a_shorter_fit() {
        let rows = separable_rows();
        let cfg = |n| LearnerConfig {
            n_trees: n,
            subsample: 0.8,
            seed: 4,
            ..LearnerConfig::default()
        };
        let long = fit(&rows, &space(10), &cfg(40)).unwrap();
        let short = fit(&rows, &space(10), &cfg(15)).unwrap();
        assert_eq!(long.truncated(15).to_json(), short.to_json());
    }

    #[test]
    fn default_grid_shape() {
        let grid = default_grid(0.01, 1);
        assert_eq!(grid.len(), 16);
        assert!(grid.iter().any(|c| (c.positive_class_weight - 100.0).abs() < 1e-9));
        assert_eq!(default_grid(0.0, 1).len(), 8);
    }
}
