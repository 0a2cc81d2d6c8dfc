use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fit_boosting, fit_forest, BoostingParams, Classifier, EnsembleKind, EnsembleModel,
    ForestParams, TrainingSet, TreeError,
};
use crate::eval::eer;

/// Inclusive hyperparameter ranges; learning rate is sampled log-uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n_trees: (usize, usize),
    pub max_depth: (usize, usize),
    pub min_leaf: (usize, usize),
    pub learning_rate: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_trees: (50, 400),
            max_depth: (2, 10),
            min_leaf: (1, 50),
            learning_rate: (0.01, 0.3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub kind: EnsembleKind,
    /// Trees for forests, stages for boosting.
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Boosting only.
    pub learning_rate: f64,
}

impl Candidate {
    pub fn fit(&self, data: &TrainingSet, seed: u64) -> EnsembleModel {
        match self.kind {
            EnsembleKind::RandomForest | EnsembleKind::ExtraTrees => {
                let params = ForestParams {
                    n_trees: self.n_trees,
                    max_depth: self.max_depth,
                    min_leaf: self.min_leaf,
                    ..ForestParams::for_kind(self.kind, data.n_features())
                };
                fit_forest(data, self.kind, &params, seed)
            }
            EnsembleKind::GradientBoosting => {
                let params = BoostingParams {
                    n_stages: self.n_trees,
                    learning_rate: self.learning_rate,
                    max_depth: self.max_depth,
                    min_leaf: self.min_leaf,
                    max_features: None,
                };
                fit_boosting(data, &params, seed)
            }
        }
    }
}

/// `n` candidates drawn from `space`; the sequence depends only on the seed.
pub fn sample_candidates(
    kind: EnsembleKind,
    space: &SearchSpace,
    n: usize,
    seed: u64,
) -> Vec<Candidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lr_lo, lr_hi) = (space.learning_rate.0.ln(), space.learning_rate.1.ln());
    (0..n)
        .map(|_| Candidate {
            kind,
            n_trees: rng.random_range(space.n_trees.0..=space.n_trees.1),
            max_depth: rng.random_range(space.max_depth.0..=space.max_depth.1),
            min_leaf: rng.random_range(space.min_leaf.0..=space.min_leaf.1),
            learning_rate: if lr_lo < lr_hi {
                rng.random_range(lr_lo..lr_hi).exp()
            } else {
                space.learning_rate.0
            },
        })
        .collect()
}

/// `(train_rows, validation_rows)` of one fold.
pub type FoldRows = (Vec<usize>, Vec<usize>);

/// Group-disjoint k-fold split: distinct groups are shuffled by `seed` and
/// dealt round-robin. Returns `(train_rows, validation_rows)` per fold.
pub fn group_kfold(groups: &[String], k: usize, seed: u64) -> Result<Vec<FoldRows>, TreeError> {
    let mut distinct: Vec<&String> = groups.iter().collect::<BTreeSet<_>>().into_iter().collect();
    if k < 2 || distinct.len() < k {
        return Err(TreeError::InsufficientGroups {
            needed: k.max(2),
            found: distinct.len(),
        });
    }
    distinct.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: std::collections::BTreeMap<&String, usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, g)| (*g, i % k))
        .collect();
    Ok((0..k)
        .map(|fold| {
            let (val, train): (Vec<usize>, Vec<usize>) =
                (0..groups.len()).partition(|&i| fold_of[&groups[i]] == fold);
            (train, val)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Candidate,
    /// Mean inner-CV EER (percent) of `best`.
    pub best_score: f64,
    pub candidates: Vec<Candidate>,
    pub scores: Vec<f64>,
}

/// Mean validation EER of one candidate over the given folds. Folds whose
/// validation part lacks a class are skipped; if none remain the score is 50.
fn cv_score(
    candidate: &Candidate,
    data: &TrainingSet,
    folds: &[(Vec<usize>, Vec<usize>)],
    seed: u64,
) -> Result<f64, TreeError> {
    let mut total = 0.0;
    let mut used = 0;
    for (train, val) in folds {
        let has_both = |rows: &[usize]| {
            rows.iter().any(|&i| data.labels()[i]) && rows.iter().any(|&i| !data.labels()[i])
        };
        if !has_both(val) || !has_both(train) {
            continue;
        }
        let model = candidate.fit(&data.subset(train)?, seed);
        let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
        for &i in val {
            let p = model.predict_proba(&data.features()[i])?;
            if data.labels()[i] {
                genuine.push(p);
            } else {
                impostor.push(p);
            }
        }
        total += eer(&genuine, &impostor).map_err(|e| TreeError::InvalidData(e.to_string()))?;
        used += 1;
    }
    Ok(if used == 0 { 50.0 } else { total / used as f64 })
}

/// Evaluate explicit candidates by group-disjoint inner CV. The lowest mean
/// EER wins; ties go to the earliest candidate.
pub fn search_candidates(
    data: &TrainingSet,
    candidates: &[Candidate],
    cv_folds: usize,
    seed: u64,
) -> Result<SearchResult, TreeError> {
    if candidates.is_empty() {
        return Err(TreeError::InvalidData("no search candidates".into()));
    }
    let folds = group_kfold(data.groups(), cv_folds, seed)?;
    if candidates.len() == 1 {
        let score = cv_score(&candidates[0], data, &folds, seed)?;
        return Ok(SearchResult {
            best: candidates[0],
            best_score: score,
            candidates: candidates.to_vec(),
            scores: vec![score],
        });
    }
    let scores = candidates
        .par_iter()
        .map(|c| cv_score(c, data, &folds, seed))
        .collect::<Result<Vec<f64>, _>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(SearchResult {
        best: candidates[best],
        best_score: scores[best],
        candidates: candidates.to_vec(),
        scores,
    })
}

/// Randomized hyperparameter search over `space`.
pub fn randomized_search(
    data: &TrainingSet,
    kind: EnsembleKind,
    space: &SearchSpace,
    n_candidates: usize,
    cv_folds: usize,
    seed: u64,
) -> Result<SearchResult, TreeError> {
    let candidates = sample_candidates(kind, space, n_candidates, seed);
    search_candidates(data, &candidates, cv_folds, seed)
}
