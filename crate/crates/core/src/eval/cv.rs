use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::folds::{subject_disjoint_folds, FoldAssignment, FoldAudit};
use super::metrics::{downsample_roc, eer, eer_from_roc, frr_at_far, roc_curve, RocPoint};
use super::report::{EvalReport, FoldMetrics};
use super::EvalError;

use crate::fusion::{
    fuse_tree, split_by_label, sweep_alpha_over, AlphaGrid, FusedScore, FusionError, FusionMethod,
    ModelSpec, ScoreVector,
};
use crate::types::Task;

/// Points kept from the pooled ROC in reports.
const ROC_POINTS: usize = 101;

/// Outer cross-validation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvParams {
    pub k: usize,
    pub seed: u64,
    pub far_target: f64,
    pub alpha_grid: AlphaGrid,
}

impl Default for CvParams {
    fn default() -> Self {
        Self {
            k: 4,
            seed: 0,
            far_target: super::DEFAULT_FAR_TARGET,
            alpha_grid: AlphaGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub assignment: FoldAssignment,
    pub audit: FoldAudit,
    pub folds: Vec<FoldMetrics>,
    pub mean_eer: f64,
    pub std_eer: f64,
    pub mean_frr: f64,
    /// EER of all test scores pooled across folds.
    pub pooled_eer: f64,
    pub roc: Vec<RocPoint>,
    pub fused: Vec<FusedScore>,
}

/// EER of the raw embedding score over every pair, without folds.
pub fn baseline_eer(vectors: &[ScoreVector]) -> Result<f64, FusionError> {
    let scores = vectors
        .iter()
        .map(|v| {
            v.ekyt().ok_or_else(|| FusionError::MissingModality {
                enroll: v.enroll.clone(),
                auth: v.auth.clone(),
                modality: "embedding",
            })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let (g, i) = split_by_label(vectors, scores);
    Ok(eer(&g, &i)?)
}

struct FoldRun {
    metrics: FoldMetrics,
    fused: Vec<FusedScore>,
}

fn run_fold(
    vectors: &[ScoreVector],
    assignment: &FoldAssignment,
    groups: &[crate::types::SubjectPair],
    fold: usize,
    method: FusionMethod,
    spec: &ModelSpec,
    params: &CvParams,
) -> Result<FoldRun, FusionError> {
    let split = assignment.split(groups, fold);
    let test: Vec<ScoreVector> = split.test.iter().map(|&i| vectors[i].clone()).collect();
    let mut metrics = FoldMetrics {
        fold,
        n_train: 0,
        n_test: test.len(),
        n_genuine: test.iter().filter(|v| v.label.is_genuine()).count(),
        n_impostor: test.iter().filter(|v| !v.label.is_genuine()).count(),
        eer_percent: 0.0,
        frr_percent: 0.0,
        reliable: false,
        alpha: None,
        model: None,
        inner_cv_eer: None,
    };
    let scores: Vec<f64> = match method {
        FusionMethod::Baseline => test
            .iter()
            .map(|v| {
                v.ekyt().ok_or_else(|| FusionError::MissingModality {
                    enroll: v.enroll.clone(),
                    auth: v.auth.clone(),
                    modality: "embedding",
                })
            })
            .collect::<Result<_, _>>()?,
        FusionMethod::Weighted => {
            let sweep = sweep_alpha_over(&test, &params.alpha_grid)?;
            metrics.alpha = Some(sweep.best_alpha);
            test.iter()
                .map(|v| {
                    let (e, s) = (v.ekyt().unwrap_or(0.0), v.s_spatial.unwrap_or(0.0));
                    sweep.best_alpha * e + (1.0 - sweep.best_alpha) * s
                })
                .collect()
        }
        FusionMethod::Tree | FusionMethod::CrossTask | FusionMethod::Triple => {
            let train: Vec<ScoreVector> = split.train.iter().map(|&i| vectors[i].clone()).collect();
            metrics.n_train = train.len();
            let fit_seed = params.seed.wrapping_add(fold as u64);
            let result = fuse_tree(&train, &test, method, spec, fit_seed)?;
            if let Some(search) = &result.search {
                metrics.model = Some(search.best);
                metrics.inner_cv_eer = Some(search.best_score);
            } else if let ModelSpec::Fixed(c) = spec {
                metrics.model = Some(*c);
            }
            result.scores
        }
    };
    let (g, i) = split_by_label(&test, scores.iter().copied());
    metrics.eer_percent = eer(&g, &i)?;
    let frr = frr_at_far(&g, &i, params.far_target)?;
    metrics.frr_percent = frr.frr_percent;
    metrics.reliable = frr.reliable;
    let fused = test
        .iter()
        .zip(&scores)
        .map(|(v, &score)| FusedScore {
            enroll: v.enroll.clone(),
            auth: v.auth.clone(),
            label: v.label,
            n_seq: v.n_seq,
            method,
            fold: Some(fold),
            score,
        })
        .collect();
    Ok(FoldRun { metrics, fused })
}

/// k-fold subject-disjoint evaluation of one fusion method. Folds run in
/// parallel; results are assembled in fold order.
pub fn run_cv(
    vectors: &[ScoreVector],
    method: FusionMethod,
    spec: &ModelSpec,
    params: &CvParams,
) -> Result<CvOutcome, FusionError> {
    let (k, seed) = (params.k, params.seed);
    if vectors.is_empty() {
        return Err(FusionError::NoPairs);
    }
    let groups: Vec<_> = vectors.iter().map(|v| v.group.clone()).collect();
    let assignment =
        subject_disjoint_folds(groups.iter().flat_map(|g| [g.first(), g.second()]), k, seed)?;
    let audit = assignment.audit(&groups);
    let runs = (0..k)
        .into_par_iter()
        .map(|fold| run_fold(vectors, &assignment, &groups, fold, method, spec, params))
        .collect::<Result<Vec<_>, _>>()?;
    let eers: Vec<f64> = runs.iter().map(|r| r.metrics.eer_percent).collect();
    let mean_eer = crate::stats::mean(&eers);
    let std_eer = crate::stats::std_population(&eers);
    let mean_frr = crate::stats::mean(
        &runs
            .iter()
            .map(|r| r.metrics.frr_percent)
            .collect::<Vec<_>>(),
    );
    let mut folds = Vec::with_capacity(k);
    let mut fused = Vec::new();
    for r in runs {
        folds.push(r.metrics);
        fused.extend(r.fused);
    }
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for f in &fused {
        if f.label.is_genuine() {
            genuine.push(f.score);
        } else {
            impostor.push(f.score);
        }
    }
    let roc = roc_curve(&genuine, &impostor)?;
    Ok(CvOutcome {
        assignment,
        audit,
        folds,
        mean_eer,
        std_eer,
        mean_frr,
        pooled_eer: eer_from_roc(&roc),
        roc: downsample_roc(&roc, ROC_POINTS),
        fused,
    })
}

/// Metrics of scores fused earlier, one report per (task, method, n_seq) in
/// that order. Scores without a fold form fold 0. The audit counts subjects
/// that appear in the test pairs of more than one fold.
pub fn evaluate_fused(
    fused: &[FusedScore],
    seed: u64,
    far_target: f64,
) -> Result<Vec<EvalReport>, EvalError> {
    let mut groups: BTreeMap<(Task, FusionMethod, usize), BTreeMap<usize, Vec<&FusedScore>>> =
        BTreeMap::new();
    for f in fused {
        groups
            .entry((f.enroll.task, f.method, f.n_seq))
            .or_default()
            .entry(f.fold.unwrap_or(0))
            .or_default()
            .push(f);
    }
    let mut reports = Vec::with_capacity(groups.len());
    for ((task, method, n_seq), folds) in groups {
        let mut metrics = Vec::with_capacity(folds.len());
        let mut genuine_all = Vec::new();
        let mut impostor_all = Vec::new();
        let mut fold_of_subject: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
        for (&fold, scores) in &folds {
            let (mut g, mut i) = (Vec::new(), Vec::new());
            for f in scores {
                if f.label.is_genuine() {
                    g.push(f.score);
                } else {
                    i.push(f.score);
                }
                for s in [f.enroll.subject_id.as_str(), f.auth.subject_id.as_str()] {
                    fold_of_subject.entry(s).or_default().insert(fold);
                }
            }
            let frr = frr_at_far(&g, &i, far_target)?;
            metrics.push(FoldMetrics {
                fold,
                n_train: 0,
                n_test: scores.len(),
                n_genuine: g.len(),
                n_impostor: i.len(),
                eer_percent: eer(&g, &i)?,
                frr_percent: frr.frr_percent,
                reliable: frr.reliable,
                alpha: None,
                model: None,
                inner_cv_eer: None,
            });
            genuine_all.extend(g);
            impostor_all.extend(i);
        }
        let eers: Vec<f64> = metrics.iter().map(|m| m.eer_percent).collect();
        let frrs: Vec<f64> = metrics.iter().map(|m| m.frr_percent).collect();
        let roc = roc_curve(&genuine_all, &impostor_all)?;
        let audit = FoldAudit {
            folds: metrics.len(),
            leaked_subjects: fold_of_subject.values().filter(|f| f.len() > 1).count(),
            test_pairs: metrics.iter().map(|m| m.n_test).collect(),
            train_pairs: Vec::new(),
        };
        let frr_reliable = metrics.iter().all(|m| m.reliable);
        let mut warnings = Vec::new();
        if !frr_reliable {
            warnings.push(format!(
                "FRR at FAR={far_target:e} is unreliable: fewer than {:.0} impostor pairs per fold",
                10.0 / far_target
            ));
        }
        if method == FusionMethod::Weighted {
            warnings.push("weighted fusion uses oracle-alpha chosen on the reported pairs".into());
        }
        if !audit.passed() {
            warnings.push(format!(
                "{} subjects appear in the test pairs of several folds",
                audit.leaked_subjects
            ));
        }
        reports.push(EvalReport {
            schema_version: super::REPORT_SCHEMA_VERSION,
            task,
            method,
            n_seq,
            recipe: method.recipe().map(|r| r.id().to_string()),
            model_kind: None,
            seed,
            k: metrics.len(),
            far_target,
            eer_percent: crate::stats::mean(&eers),
            eer_std: crate::stats::std_population(&eers),
            frr_percent: crate::stats::mean(&frrs),
            frr_reliable,
            pooled_eer_percent: eer_from_roc(&roc),
            roc: downsample_roc(&roc, ROC_POINTS),
            folds: metrics,
            audit,
            warnings,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Pair;
    use crate::trees::{Candidate, EnsembleKind};
    use crate::types::{RecordingKey, Task};
    use rand::{Rng, SeedableRng};

    fn corpus(n: usize, informative: bool, seed: u64) -> Vec<ScoreVector> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                let pair = Pair::new(
                    RecordingKey::new(format!("S{a:03}"), 1, 2, Task::Ran).unwrap(),
                    RecordingKey::new(format!("S{b:03}"), 1, 1, Task::Ran).unwrap(),
                );
                let mut v = ScoreVector::new(&pair, 1);
                let shift = if informative && a == b { 2.0 } else { 0.0 };
                v.s_ekyt_ran = Some(shift + rng.random::<f64>());
                v.s_spatial = Some(rng.random::<f64>());
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn separable_scores_have_zero_eer() {
        let vs = corpus(12, true, 1);
        let out = run_cv(
            &vs,
            FusionMethod::Baseline,
            &ModelSpec::Fixed(candidate()),
            &params(2),
        )
        .unwrap();
        assert_eq!(out.folds.len(), 4);
        assert_eq!(out.mean_eer, 0.0);
        assert!(out.audit.passed());
    }

    #[test]
    fn uninformative_scores_near_fifty() {
        let vs = corpus(400, false, 3);
        let out = run_cv(
            &vs,
            FusionMethod::Baseline,
            &ModelSpec::Fixed(candidate()),
            &params(5),
        )
        .unwrap();
        assert!((out.mean_eer - 50.0).abs() < 5.0, "{}", out.mean_eer);
        assert!((out.pooled_eer - 50.0).abs() < 5.0, "{}", out.pooled_eer);
    }

    fn params(seed: u64) -> CvParams {
        CvParams {
            seed,
            far_target: 1e-2,
            ..Default::default()
        }
    }

    fn candidate() -> Candidate {
        Candidate {
            kind: EnsembleKind::RandomForest,
            n_trees: 10,
            max_depth: 4,
            min_leaf: 2,
            learning_rate: 0.1,
        }
    }

    #[test]
    fn fused_scores_evaluate_like_the_cv_run() {
        let vs = corpus(12, false, 9);
        let spec = ModelSpec::Fixed(candidate());
        for method in [
            FusionMethod::Baseline,
            FusionMethod::Tree,
            FusionMethod::Weighted,
        ] {
            let out = run_cv(&vs, method, &spec, &params(4)).unwrap();
            let reports = evaluate_fused(&out.fused, 4, 1e-2).unwrap();
            assert_eq!(reports.len(), 1);
            let r = &reports[0];
            assert_eq!(r.k, 4);
            assert!(r.audit.passed());
            assert_eq!(r.eer_percent, out.mean_eer);
            assert_eq!(r.pooled_eer_percent, out.pooled_eer);
            for (a, b) in r.folds.iter().zip(&out.folds) {
                assert_eq!((a.eer_percent, a.n_test), (b.eer_percent, b.n_test));
            }
        }
    }

    #[test]
    fn tree_fusion_runs_and_is_deterministic() {
        let vs = corpus(12, true, 7);
        let spec = ModelSpec::Fixed(candidate());
        let a = run_cv(&vs, FusionMethod::Tree, &spec, &params(1)).unwrap();
        let b = run_cv(&vs, FusionMethod::Tree, &spec, &params(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.folds.iter().all(|f| f.n_train > 0));
        assert_eq!(a.mean_eer, 0.0);
    }
}
