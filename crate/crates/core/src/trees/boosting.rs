use serde::{Deserialize, Serialize};

use super::tree::{fit_regression_presorted, Presorted};
use super::{
    member_rng, sigmoid, EnsembleKind, EnsembleModel, Splitter, TrainingSet, TreeParams,
    PROBABILITY_CLIP,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostingParams {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_features: Option<usize>,
}

impl Default for BoostingParams {
    fn default() -> Self {
        Self {
            n_stages: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf: 1,
            max_features: None,
        }
    }
}

/// Weighted log-odds of the positive class, clipped away from 0 and 1.
fn base_log_odds(data: &TrainingSet) -> f64 {
    let total: f64 = data.weights().iter().sum();
    let pos: f64 = data
        .weights()
        .iter()
        .zip(data.labels())
        .filter(|(_, &l)| l)
        .map(|(w, _)| w)
        .sum();
    let p = (pos / total).clamp(PROBABILITY_CLIP, 1.0 - PROBABILITY_CLIP);
    (p / (1.0 - p)).ln()
}

/// Logistic-loss gradient boosting. Each stage fits a squared-error tree to
/// the residuals `y - p`, then replaces every leaf by one Newton step
/// `sum(w r) / sum(w p (1 - p))` scaled by the learning rate.
pub fn fit_boosting(data: &TrainingSet, params: &BoostingParams, seed: u64) -> EnsembleModel {
    let n = data.len();
    let y: Vec<f64> = data
        .labels()
        .iter()
        .map(|&l| if l { 1.0 } else { 0.0 })
        .collect();
    let base = base_log_odds(data);
    let mut raw = vec![base; n];
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        max_features: params.max_features,
        splitter: Splitter::Best,
    };
    let presorted = Presorted::new(data.features());
    let mut trees = Vec::with_capacity(params.n_stages);
    for stage in 0..params.n_stages {
        let p: Vec<f64> = raw.iter().map(|&f| sigmoid(f)).collect();
        let residual: Vec<f64> = y.iter().zip(&p).map(|(y, p)| y - p).collect();
        let mut tree = fit_regression_presorted(
            data.features(),
            &residual,
            data.weights(),
            &presorted,
            &tree_params,
            seed,
            member_rng(seed, stage as u64),
        );
        let leaves: Vec<usize> = data.features().iter().map(|x| tree.leaf_index(x)).collect();
        let mut num = vec![0.0; tree.nodes.len()];
        let mut den = vec![0.0; tree.nodes.len()];
        for i in 0..n {
            let w = data.weights()[i];
            num[leaves[i]] += w * residual[i];
            den[leaves[i]] += w * p[i] * (1.0 - p[i]);
        }
        // Only leaf nodes are touched; split nodes ignore the update.
        let step: Vec<f64> = num
            .iter()
            .zip(&den)
            .map(|(&a, &b)| {
                if b > 1e-12 {
                    params.learning_rate * a / b
                } else {
                    0.0
                }
            })
            .collect();
        for (node, &v) in step.iter().enumerate() {
            tree.set_leaf_value(node, v);
        }
        for i in 0..n {
            raw[i] += step[leaves[i]];
        }
        trees.push(tree);
    }
    EnsembleModel {
        kind: EnsembleKind::GradientBoosting,
        trees,
        n_features: data.n_features(),
        learning_rate: Some(params.learning_rate),
        base_score: Some(base),
        feature_subsample: params.max_features.map_or(1.0, |m| {
            m.min(data.n_features()) as f64 / data.n_features() as f64
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::Classifier;
    use rand::{Rng, SeedableRng};

    fn log_loss(model: &EnsembleModel, data: &TrainingSet) -> f64 {
        let mut total = 0.0;
        for ((x, &l), w) in data
            .features()
            .iter()
            .zip(data.labels())
            .zip(data.weights())
        {
            let p = model.predict_proba(x).unwrap().clamp(1e-15, 1.0 - 1e-15);
            total -= w * if l { p.ln() } else { (1.0 - p).ln() };
        }
        total
    }

    #[test]
    fn zero_stages_predicts_base_rate() {
        let d = TrainingSet::unweighted(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![true, false, false, false],
        )
        .unwrap();
        let m = fit_boosting(
            &d,
            &BoostingParams {
                n_stages: 0,
                ..Default::default()
            },
            1,
        );
        for x in [-5.0, 0.0, 10.0] {
            assert!((m.predict_proba(&[x]).unwrap() - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_non_increasing_on_separable_data() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 40.0]).collect();
        let y: Vec<bool> = (0..40).map(|i| i >= 17).collect();
        let d = TrainingSet::unweighted(x, y).unwrap();
        let m = fit_boosting(
            &d,
            &BoostingParams {
                n_stages: 10,
                ..Default::default()
            },
            3,
        );
        let mut prev = f64::INFINITY;
        for k in 0..=10 {
            let partial = EnsembleModel {
                trees: m.trees[..k].to_vec(),
                ..m.clone()
            };
            let loss = log_loss(&partial, &d);
            assert!(loss < prev, "stage {k}: {loss} vs {prev}");
            prev = loss;
        }
    }

    #[test]
    fn uninformative_features_stay_near_half() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let x: Vec<Vec<f64>> = (0..1000)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let y: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        let d = TrainingSet::unweighted(x, y).unwrap();
        let params = BoostingParams {
            n_stages: 10,
            learning_rate: 0.05,
            max_depth: 1,
            min_leaf: 100,
            max_features: None,
        };
        let m = fit_boosting(&d, &params, 2);
        for _ in 0..200 {
            let p = m
                .predict_proba(&[rng.random::<f64>(), rng.random::<f64>()])
                .unwrap();
            assert!((p - 0.5).abs() < 0.05, "{p}");
        }
    }

    #[test]
    fn single_class_saturates_at_clip() {
        let d = TrainingSet::unweighted(vec![vec![0.0], vec![1.0]], vec![true, true]).unwrap();
        let m = fit_boosting(
            &d,
            &BoostingParams {
                n_stages: 3,
                ..Default::default()
            },
            0,
        );
        let p = m.predict_proba(&[0.5]).unwrap();
        assert!(p >= 1.0 - PROBABILITY_CLIP && p.is_finite());
        assert!(m.base_score.unwrap().is_finite());
    }
}
