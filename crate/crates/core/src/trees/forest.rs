use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_classifier_presorted, Presorted};
use super::{member_rng, EnsembleKind, EnsembleModel, Splitter, TrainingSet, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features examined per split; `None` examines all.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl ForestParams {
    /// Conventional defaults: sqrt(n_features) per split, bootstrap for
    /// random forests only.
    pub fn for_kind(kind: EnsembleKind, n_features: usize) -> Self {
        Self {
            n_trees: 100,
            max_depth: 10,
            min_leaf: 1,
            max_features: Some(((n_features as f64).sqrt().round() as usize).max(1)),
            bootstrap: kind == EnsembleKind::RandomForest,
        }
    }
}

/// Fit a random forest (best midpoint splits) or extra-trees ensemble
/// (random thresholds). Tree `i` draws from ChaCha stream `i` of `seed`.
///
/// Panics if `kind` is gradient boosting.
pub fn fit_forest(
    data: &TrainingSet,
    kind: EnsembleKind,
    params: &ForestParams,
    seed: u64,
) -> EnsembleModel {
    let splitter = match kind {
        EnsembleKind::RandomForest => Splitter::Best,
        EnsembleKind::ExtraTrees => Splitter::Random,
        EnsembleKind::GradientBoosting => panic!("fit_forest does not fit boosting models"),
    };
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        max_features: params.max_features,
        splitter,
    };
    let y: Vec<f64> = data
        .labels()
        .iter()
        .map(|&l| if l { 1.0 } else { 0.0 })
        .collect();
    let n = data.len();
    let presorted = Presorted::new(data.features());
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = member_rng(seed, t as u64);
            let weights = if params.bootstrap {
                let mut counts = vec![0u32; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1;
                }
                data.weights()
                    .iter()
                    .zip(&counts)
                    .map(|(w, &c)| w * c as f64)
                    .collect()
            } else {
                data.weights().to_vec()
            };
            fit_classifier_presorted(data, &y, &weights, &presorted, &tree_params, seed, rng)
        })
        .collect();
    EnsembleModel {
        kind,
        trees,
        n_features: data.n_features(),
        learning_rate: None,
        base_score: None,
        feature_subsample: params.max_features.map_or(1.0, |m| {
            m.min(data.n_features()) as f64 / data.n_features() as f64
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{fit_tree, Classifier};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn blobs(n: usize, sep: f64, seed: u64) -> TrainingSet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = i % 2 == 0;
            let c = if label { sep } else { 0.0 };
            x.push(vec![
                c + noise.sample(&mut rng),
                c + noise.sample(&mut rng),
                noise.sample(&mut rng),
            ]);
            y.push(label);
        }
        TrainingSet::unweighted(x, y).unwrap()
    }

    #[test]
    fn degenerate_forest_equals_single_tree() {
        let d = blobs(80, 1.0, 3);
        let params = ForestParams {
            n_trees: 1,
            max_depth: 6,
            min_leaf: 2,
            max_features: None,
            bootstrap: false,
        };
        let forest = fit_forest(&d, EnsembleKind::RandomForest, &params, 9);
        let tree = fit_tree(
            &d,
            &TreeParams {
                max_depth: 6,
                min_leaf: 2,
                ..Default::default()
            },
            9,
        );
        assert_eq!(forest.trees[0], tree);
    }

    #[test]
    fn pure_class_probability_is_one() {
        let d =
            TrainingSet::unweighted(vec![vec![0.0], vec![1.0], vec![2.0]], vec![true; 3]).unwrap();
        for kind in [EnsembleKind::RandomForest, EnsembleKind::ExtraTrees] {
            let m = fit_forest(&d, kind, &ForestParams::for_kind(kind, 1), 1);
            assert_eq!(m.predict_proba(&[5.0]).unwrap(), 1.0);
        }
    }

    #[test]
    fn forests_are_seed_deterministic() {
        let d = blobs(60, 1.5, 4);
        for kind in [EnsembleKind::RandomForest, EnsembleKind::ExtraTrees] {
            let p = ForestParams {
                n_trees: 12,
                ..ForestParams::for_kind(kind, 3)
            };
            assert_eq!(fit_forest(&d, kind, &p, 5), fit_forest(&d, kind, &p, 5));
            assert_ne!(fit_forest(&d, kind, &p, 5), fit_forest(&d, kind, &p, 6));
        }
    }

    #[test]
    fn forest_probability_within_member_range() {
        let d = blobs(100, 1.0, 8);
        let m = fit_forest(
            &d,
            EnsembleKind::ExtraTrees,
            &ForestParams {
                n_trees: 15,
                ..ForestParams::for_kind(EnsembleKind::ExtraTrees, 3)
            },
            2,
        );
        for row in blobs(30, 1.0, 99).features() {
            let p = m.predict_proba(row).unwrap();
            let members: Vec<f64> = m.trees.iter().map(|t| t.leaf_value(row)).collect();
            let lo = members.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = members.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
        }
    }

    #[test]
    fn forest_generalizes_at_least_as_well_as_a_tree() {
        let accuracy = |pred: &dyn Fn(&[f64]) -> f64, test: &TrainingSet| {
            test.features()
                .iter()
                .zip(test.labels())
                .filter(|(x, &y)| (pred(x) > 0.5) == y)
                .count() as f64
                / test.len() as f64
        };
        let mut forest_total = 0.0;
        let mut tree_total = 0.0;
        let mut forest_wins = 0;
        for s in 0..20 {
            let train = blobs(120, 2.0, 100 + s);
            let test = blobs(200, 2.0, 500 + s);
            let tree = fit_tree(&train, &TreeParams::default(), s);
            let forest = fit_forest(
                &train,
                EnsembleKind::RandomForest,
                &ForestParams {
                    n_trees: 50,
                    max_depth: 8,
                    ..ForestParams::for_kind(EnsembleKind::RandomForest, 3)
                },
                s,
            );
            let a_tree = accuracy(&|x| tree.predict_proba(x).unwrap(), &test);
            let a_forest = accuracy(&|x| forest.predict_proba(x).unwrap(), &test);
            tree_total += a_tree;
            forest_total += a_forest;
            if a_forest >= a_tree {
                forest_wins += 1;
            }
        }
        assert!(forest_total > tree_total);
        assert!(forest_wins >= 17, "forest won {forest_wins}/20");
    }
}
