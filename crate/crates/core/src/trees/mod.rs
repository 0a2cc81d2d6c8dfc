//! Tree-based fusion classifiers: CART decision trees, random forests,
//! extremely randomized trees and logistic gradient boosting, plus a
//! randomized hyperparameter search with group-disjoint inner folds.
//!
//! All learners take per-sample weights and return probabilities of the
//! positive (genuine) class. Given the same data, parameters and seed, every
//! model is bit-identical regardless of the rayon thread count.

mod boosting;
mod forest;
mod search;
mod tree;

pub use boosting::{fit_boosting, BoostingParams};
pub use forest::{fit_forest, ForestParams};
pub use search::{
    group_kfold, randomized_search, sample_candidates, search_candidates, Candidate, SearchResult,
    SearchSpace,
};
pub use tree::{fit_regression_tree, fit_tree, Node, Splitter, TreeModel, TreeParams};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower/upper clip for probabilities entering log-odds.
pub const PROBABILITY_CLIP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("need at least {needed} distinct groups for inner cross-validation, found {found}")]
    InsufficientGroups { needed: usize, found: usize },
    #[error("model file: {0}")]
    Serialization(String),
}

/// Rows of engineered features with binary labels, weights and group tags.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    features: Vec<Vec<f64>>,
    labels: Vec<bool>,
    weights: Vec<f64>,
    groups: Vec<String>,
    n_features: usize,
}

impl TrainingSet {
    /// `labels[i]` is true for the positive (genuine) class.
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<bool>,
        weights: Vec<f64>,
        groups: Vec<String>,
    ) -> Result<Self, TreeError> {
        let n = features.len();
        if labels.len() != n || weights.len() != n || groups.len() != n {
            return Err(TreeError::InvalidData(format!(
                "misaligned rows: {} features, {} labels, {} weights, {} groups",
                n,
                labels.len(),
                weights.len(),
                groups.len()
            )));
        }
        if n == 0 {
            return Err(TreeError::InvalidData("no rows".into()));
        }
        let n_features = features[0].len();
        if n_features == 0 {
            return Err(TreeError::InvalidData("rows have no features".into()));
        }
        for (i, row) in features.iter().enumerate() {
            if row.len() != n_features {
                return Err(TreeError::InvalidData(format!(
                    "row {i} has {} features, expected {n_features}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(TreeError::InvalidData(format!(
                    "row {i} has a non-finite feature"
                )));
            }
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(TreeError::InvalidData(format!(
                "row {i} has non-positive weight"
            )));
        }
        Ok(Self {
            features,
            labels,
            weights,
            groups,
            n_features,
        })
    }

    /// Unit weights, each row its own group.
    pub fn unweighted(features: Vec<Vec<f64>>, labels: Vec<bool>) -> Result<Self, TreeError> {
        let n = features.len();
        Self::new(
            features,
            labels,
            vec![1.0; n],
            (0..n).map(|i| i.to_string()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self, TreeError> {
        Self::new(
            rows.iter().map(|&i| self.features[i].clone()).collect(),
            rows.iter().map(|&i| self.labels[i]).collect(),
            rows.iter().map(|&i| self.weights[i]).collect(),
            rows.iter().map(|&i| self.groups[i].clone()).collect(),
        )
    }

    /// Replace weights by inverse class frequency, normalized to mean 1.
    pub fn with_class_weights(mut self) -> Self {
        self.weights = class_balanced_weights(&self.labels);
        self
    }
}

/// Inverse class frequency weights with mean 1. A single-class input gets
/// unit weights.
pub fn class_balanced_weights(labels: &[bool]) -> Vec<f64> {
    let n = labels.len() as f64;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = n - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return vec![1.0; labels.len()];
    }
    labels
        .iter()
        .map(|&l| {
            if l {
                n / (2.0 * n_pos)
            } else {
                n / (2.0 * n_neg)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    RandomForest,
    ExtraTrees,
    GradientBoosting,
}

impl EnsembleKind {
    pub const ALL: [EnsembleKind; 3] = [
        EnsembleKind::RandomForest,
        EnsembleKind::ExtraTrees,
        EnsembleKind::GradientBoosting,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleKind::RandomForest => "random_forest",
            EnsembleKind::ExtraTrees => "extra_trees",
            EnsembleKind::GradientBoosting => "gradient_boosting",
        }
    }
}

impl std::str::FromStr for EnsembleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rf" | "random_forest" => Ok(EnsembleKind::RandomForest),
            "et" | "extra_trees" => Ok(EnsembleKind::ExtraTrees),
            "gb" | "gbm" | "gradient_boosting" => Ok(EnsembleKind::GradientBoosting),
            other => Err(format!("unknown ensemble kind `{other}`")),
        }
    }
}

impl std::fmt::Display for EnsembleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fitted ensemble.
///
/// Forests average member-tree leaf probabilities. Boosting stores
/// learning-rate-scaled stage outputs in its trees and returns
/// `sigmoid(base_score + sum of stage outputs)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub kind: EnsembleKind,
    pub trees: Vec<TreeModel>,
    pub n_features: usize,
    /// Boosting only.
    pub learning_rate: Option<f64>,
    /// Boosting only: initial log-odds.
    pub base_score: Option<f64>,
    pub feature_subsample: f64,
}

pub trait Classifier {
    fn n_features(&self) -> usize;

    /// Probability of the positive class for one row.
    fn predict_proba(&self, row: &[f64]) -> Result<f64, TreeError>;

    fn predict_many(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, TreeError> {
        rows.iter().map(|r| self.predict_proba(r)).collect()
    }
}

fn check_dims(expected: usize, row: &[f64]) -> Result<(), TreeError> {
    if row.len() != expected {
        return Err(TreeError::DimensionMismatch {
            expected,
            found: row.len(),
        });
    }
    Ok(())
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Classifier for TreeModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, row: &[f64]) -> Result<f64, TreeError> {
        check_dims(self.n_features, row)?;
        Ok(self.leaf_value(row))
    }
}

impl Classifier for EnsembleModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, row: &[f64]) -> Result<f64, TreeError> {
        check_dims(self.n_features, row)?;
        match self.kind {
            EnsembleKind::RandomForest | EnsembleKind::ExtraTrees => {
                if self.trees.is_empty() {
                    return Ok(0.5);
                }
                let total: f64 = self.trees.iter().map(|t| t.leaf_value(row)).sum();
                Ok((total / self.trees.len() as f64).clamp(0.0, 1.0))
            }
            EnsembleKind::GradientBoosting => {
                let raw = self.base_score.unwrap_or(0.0)
                    + self.trees.iter().map(|t| t.leaf_value(row)).sum::<f64>();
                Ok(sigmoid(raw))
            }
        }
    }
}

impl EnsembleModel {
    pub fn to_json(&self) -> Result<String, TreeError> {
        serde_json::to_string_pretty(self).map_err(|e| TreeError::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        serde_json::from_str(text).map_err(|e| TreeError::Serialization(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), TreeError> {
        std::fs::write(path, self.to_json()? + "\n")
            .map_err(|e| TreeError::Serialization(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TreeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TreeError::Serialization(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Deterministic per-member generator: one ChaCha stream per member index.
pub(crate) fn member_rng(seed: u64, member: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member);
    rng
}
