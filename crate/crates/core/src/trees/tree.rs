//! Greedy CART growth shared by classifiers and the boosting stage trees.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{member_rng, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    /// Preorder node array; index 0 is the root.
    pub nodes: Vec<Node>,
    pub n_features: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl TreeModel {
    pub fn single_leaf(value: f64, n_features: usize) -> Self {
        Self {
            nodes: vec![Node::Leaf { value }],
            n_features,
            max_depth: 0,
            min_leaf: 1,
            seed: 0,
        }
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn leaf_value(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub(crate) fn set_leaf_value(&mut self, index: usize, v: f64) {
        if let Node::Leaf { value } = &mut self.nodes[index] {
            *value = v;
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Splitter {
    /// Exhaustive midpoint thresholds.
    Best,
    /// One uniform random threshold per candidate feature.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split; `None` examines all.
    pub max_features: Option<usize>,
    pub splitter: Splitter,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 8,
            min_leaf: 1,
            max_features: None,
            splitter: Splitter::Best,
        }
    }
}

/// Weighted sufficient statistics of a node.
trait NodeStats: Copy + Default {
    fn add(&mut self, y: f64, w: f64);
    fn minus(&self, other: &Self) -> Self;
    /// Total weight times node impurity.
    fn weighted_impurity(&self) -> f64;
    fn is_pure(&self) -> bool;
    fn leaf_value(&self) -> f64;
}

/// Binary class counts; impurity is Gini.
#[derive(Debug, Clone, Copy, Default)]
struct GiniStats {
    weight: f64,
    positive: f64,
}

impl NodeStats for GiniStats {
    fn add(&mut self, y: f64, w: f64) {
        self.weight += w;
        if y > 0.5 {
            self.positive += w;
        }
    }

    fn minus(&self, other: &Self) -> Self {
        Self {
            weight: self.weight - other.weight,
            positive: self.positive - other.positive,
        }
    }

    fn weighted_impurity(&self) -> f64 {
        if self.weight <= 0.0 {
            return 0.0;
        }
        // W * (1 - p^2 - (1-p)^2) = 2 * pos * neg / W
        2.0 * self.positive * (self.weight - self.positive) / self.weight
    }

    fn is_pure(&self) -> bool {
        self.positive <= 0.0 || self.positive >= self.weight
    }

    fn leaf_value(&self) -> f64 {
        (self.positive / self.weight).clamp(0.0, 1.0)
    }
}

/// Weighted moments; impurity is squared error.
#[derive(Debug, Clone, Copy, Default)]
struct SquaredErrorStats {
    weight: f64,
    sum: f64,
    sum_sq: f64,
}

impl NodeStats for SquaredErrorStats {
    fn add(&mut self, y: f64, w: f64) {
        self.weight += w;
        self.sum += w * y;
        self.sum_sq += w * y * y;
    }

    fn minus(&self, other: &Self) -> Self {
        Self {
            weight: self.weight - other.weight,
            sum: self.sum - other.sum,
            sum_sq: self.sum_sq - other.sum_sq,
        }
    }

    fn weighted_impurity(&self) -> f64 {
        if self.weight <= 0.0 {
            return 0.0;
        }
        (self.sum_sq - self.sum * self.sum / self.weight).max(0.0)
    }

    fn is_pure(&self) -> bool {
        self.weighted_impurity() <= 1e-14 * self.weight.max(1.0)
    }

    fn leaf_value(&self) -> f64 {
        self.sum / self.weight
    }
}

#[derive(Debug, Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Midpoint of two distinct adjacent values that still separates them.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m < hi {
        m
    } else {
        lo
    }
}

struct Grower<'a, S> {
    /// Column-major features.
    x: &'a [Vec<f64>],
    y: &'a [f64],
    w: &'a [f64],
    params: &'a TreeParams,
    n_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    /// Scratch membership flags indexed by row.
    goes_left: Vec<bool>,
    _stats: std::marker::PhantomData<S>,
}

/// Feature columns plus row indices sorted by each feature, ties broken by
/// row index.
#[derive(Debug, Clone)]
pub(crate) struct Presorted {
    columns: Vec<Vec<f64>>,
    orders: Vec<Vec<usize>>,
}

impl Presorted {
    pub(crate) fn new(x: &[Vec<f64>]) -> Self {
        let n_features = x.first().map_or(0, Vec::len);
        let columns: Vec<Vec<f64>> = (0..n_features)
            .map(|f| x.iter().map(|r| r[f]).collect())
            .collect();
        let orders = columns
            .iter()
            .map(|col| {
                let mut keyed: Vec<(f64, usize)> = col.iter().copied().zip(0..).collect();
                keyed.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                keyed.into_iter().map(|(_, i)| i).collect()
            })
            .collect();
        Self { columns, orders }
    }

    /// Orders restricted to rows with positive weight.
    fn restrict(&self, w: &[f64]) -> Vec<Vec<usize>> {
        self.orders
            .iter()
            .map(|o| o.iter().copied().filter(|&i| w[i] > 0.0).collect())
            .collect()
    }
}

impl<'a, S: NodeStats> Grower<'a, S> {
    fn node_stats(&self, rows: &[usize]) -> S {
        let mut s = S::default();
        for &i in rows {
            s.add(self.y[i], self.w[i]);
        }
        s
    }

    /// `rows` is in ascending index order; `orders[f]` holds the same rows
    /// sorted by feature `f`.
    fn grow(&mut self, rows: Vec<usize>, orders: Vec<Vec<usize>>, depth: usize) -> usize {
        let stats = self.node_stats(&rows);
        let index = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: stats.leaf_value(),
        });
        if depth >= self.params.max_depth
            || rows.len() < 2 * self.params.min_leaf.max(1)
            || stats.is_pure()
        {
            return index;
        }
        let Some(split) = self.find_split(&rows, &orders, &stats) else {
            return index;
        };
        for &i in &rows {
            self.goes_left[i] = self.x[split.feature][i] <= split.threshold;
        }
        let goes_left = &self.goes_left;
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| goes_left[i]);
        let (left_orders, right_orders): (Vec<Vec<usize>>, Vec<Vec<usize>>) = orders
            .iter()
            .map(|o| o.iter().partition::<Vec<usize>, _>(|&&i| goes_left[i]))
            .unzip();
        drop(orders);
        let left = self.grow(left_rows, left_orders, depth + 1);
        let right = self.grow(right_rows, right_orders, depth + 1);
        self.nodes[index] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        index
    }

    /// Candidate features in evaluation order: a sorted random subset of
    /// `max_features`, followed by the remaining features (examined one at a
    /// time only if the subset yields no valid split).
    fn feature_order(&mut self) -> (Vec<usize>, Vec<usize>) {
        let m = self
            .params
            .max_features
            .unwrap_or(self.n_features)
            .clamp(1, self.n_features);
        if m >= self.n_features {
            return ((0..self.n_features).collect(), Vec::new());
        }
        let mut perm: Vec<usize> = (0..self.n_features).collect();
        perm.shuffle(&mut self.rng);
        let rest = perm.split_off(m);
        perm.sort_unstable();
        (perm, rest)
    }

    fn find_split(&mut self, rows: &[usize], orders: &[Vec<usize>], parent: &S) -> Option<Split> {
        let (first, rest) = self.feature_order();
        let mut best: Option<Split> = None;
        for &f in &first {
            self.consider(f, rows, &orders[f], parent, &mut best);
        }
        for &f in &rest {
            if best.is_some() {
                break;
            }
            self.consider(f, rows, &orders[f], parent, &mut best);
        }
        best
    }

    fn consider(
        &mut self,
        feature: usize,
        rows: &[usize],
        sorted: &[usize],
        parent: &S,
        best: &mut Option<Split>,
    ) {
        let candidate = match self.params.splitter {
            Splitter::Best => self.best_threshold(feature, sorted, parent),
            Splitter::Random => self.random_threshold(feature, rows, parent),
        };
        if let Some(c) = candidate {
            if best.is_none_or(|b| c.gain > b.gain) {
                *best = Some(c);
            }
        }
    }

    fn best_threshold(&self, feature: usize, sorted: &[usize], parent: &S) -> Option<Split> {
        let col = &self.x[feature];
        let n = sorted.len();
        let min_leaf = self.params.min_leaf.max(1);
        let parent_impurity = parent.weighted_impurity();
        let mut left = S::default();
        let mut best: Option<Split> = None;
        for k in 0..n - 1 {
            let i = sorted[k];
            left.add(self.y[i], self.w[i]);
            let (lo, hi) = (col[i], col[sorted[k + 1]]);
            if lo == hi || k + 1 < min_leaf || n - k - 1 < min_leaf {
                continue;
            }
            let right = parent.minus(&left);
            let gain = parent_impurity - left.weighted_impurity() - right.weighted_impurity();
            if best.is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    feature,
                    threshold: midpoint(lo, hi),
                    gain,
                });
            }
        }
        best
    }

    fn random_threshold(&mut self, feature: usize, rows: &[usize], parent: &S) -> Option<Split> {
        let (lo, hi) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = self.x[feature][i];
                (lo.min(v), hi.max(v))
            });
        if lo >= hi {
            return None;
        }
        let threshold = self.rng.random_range(lo..hi);
        let mut left = S::default();
        let mut n_left = 0;
        for &i in rows {
            if self.x[feature][i] <= threshold {
                left.add(self.y[i], self.w[i]);
                n_left += 1;
            }
        }
        let min_leaf = self.params.min_leaf.max(1);
        if n_left < min_leaf || rows.len() - n_left < min_leaf {
            return None;
        }
        let right = parent.minus(&left);
        Some(Split {
            feature,
            threshold,
            gain: parent.weighted_impurity() - left.weighted_impurity() - right.weighted_impurity(),
        })
    }
}

fn grow<S: NodeStats>(
    x: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    presorted: &Presorted,
    params: &TreeParams,
    seed: u64,
    rng: ChaCha8Rng,
) -> TreeModel {
    let n_features = x.first().map_or(0, Vec::len);
    let rows: Vec<usize> = (0..x.len()).filter(|&i| w[i] > 0.0).collect();
    let orders = presorted.restrict(w);
    let mut grower = Grower::<S> {
        x: &presorted.columns,
        y,
        w,
        params,
        n_features,
        rng,
        nodes: Vec::new(),
        goes_left: vec![false; x.len()],
        _stats: std::marker::PhantomData,
    };
    grower.grow(rows, orders, 0);
    TreeModel {
        nodes: grower.nodes,
        n_features,
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        seed,
    }
}

/// Gini classification tree over all rows of `data`.
pub fn fit_tree(data: &TrainingSet, params: &TreeParams, seed: u64) -> TreeModel {
    let y: Vec<f64> = data
        .labels()
        .iter()
        .map(|&l| if l { 1.0 } else { 0.0 })
        .collect();
    fit_classifier_rows(data, &y, data.weights(), params, seed, member_rng(seed, 0))
}

pub(crate) fn fit_classifier_rows(
    data: &TrainingSet,
    y: &[f64],
    weights: &[f64],
    params: &TreeParams,
    seed: u64,
    rng: ChaCha8Rng,
) -> TreeModel {
    fit_classifier_presorted(
        data,
        y,
        weights,
        &Presorted::new(data.features()),
        params,
        seed,
        rng,
    )
}

pub(crate) fn fit_classifier_presorted(
    data: &TrainingSet,
    y: &[f64],
    weights: &[f64],
    presorted: &Presorted,
    params: &TreeParams,
    seed: u64,
    rng: ChaCha8Rng,
) -> TreeModel {
    grow::<GiniStats>(data.features(), y, weights, presorted, params, seed, rng)
}

/// Squared-error regression tree on `targets`; leaves hold weighted means.
pub fn fit_regression_tree(
    x: &[Vec<f64>],
    targets: &[f64],
    weights: &[f64],
    params: &TreeParams,
    seed: u64,
    rng: ChaCha8Rng,
) -> TreeModel {
    fit_regression_presorted(x, targets, weights, &Presorted::new(x), params, seed, rng)
}

pub(crate) fn fit_regression_presorted(
    x: &[Vec<f64>],
    targets: &[f64],
    weights: &[f64],
    presorted: &Presorted,
    params: &TreeParams,
    seed: u64,
    rng: ChaCha8Rng,
) -> TreeModel {
    grow::<SquaredErrorStats>(x, targets, weights, presorted, params, seed, rng)
}
