//! Score-level fusion: weighted alpha fusion, tree-ensemble fusion of
//! engineered score features, cross-task and triple fusion.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{eer, EvalError, Pair};
use crate::ingest::IngestError;
use crate::trees::{
    fit_boosting, fit_forest, randomized_search, BoostingParams, Candidate, Classifier,
    EnsembleKind, EnsembleModel, ForestParams, SearchResult, SearchSpace, TrainingSet, TreeError,
};
use crate::types::{PairLabel, RecordingKey, SubjectPair, Task};

/// Alpha grid: 0.50, 0.51, ..., 1.00 as integer hundredths.
pub const ALPHA_GRID_PERCENT: std::ops::RangeInclusive<u32> = 50..=100;

/// Inclusive alpha bounds in hundredths, stepped by 0.01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub min_percent: u32,
    pub max_percent: u32,
}

impl Default for AlphaGrid {
    fn default() -> Self {
        Self {
            min_percent: *ALPHA_GRID_PERCENT.start(),
            max_percent: *ALPHA_GRID_PERCENT.end(),
        }
    }
}

impl AlphaGrid {
    pub fn validate(&self) -> Result<(), FusionError> {
        let (lo, hi) = (self.min_percent, self.max_percent);
        if !(50..=100).contains(&lo) {
            return Err(FusionError::AlphaOutOfRange(lo as f64 / 100.0));
        }
        if hi < lo || hi > 100 {
            return Err(FusionError::AlphaOutOfRange(hi as f64 / 100.0));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        (self.max_percent + 1).saturating_sub(self.min_percent) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("alpha {0} outside [0.5, 1.0]")]
    AlphaOutOfRange(f64),
    #[error("pair {enroll} vs {auth} lacks the {modality} score")]
    MissingModality {
        enroll: RecordingKey,
        auth: RecordingKey,
        modality: &'static str,
    },
    #[error("no {task} counterpart for pair {enroll} vs {auth}")]
    MissingTask {
        enroll: RecordingKey,
        auth: RecordingKey,
        task: Task,
    },
    #[error("subjects on both sides of a train/test split: {0:?}")]
    SubjectLeakage(Vec<String>),
    #[error("no score vectors")]
    NoPairs,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Per-modality similarities of one comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub enroll: RecordingKey,
    pub auth: RecordingKey,
    pub label: PairLabel,
    pub group: SubjectPair,
    pub n_seq: usize,
    pub s_ekyt_ran: Option<f64>,
    pub s_ekyt_tex: Option<f64>,
    pub s_spatial: Option<f64>,
}

impl ScoreVector {
    pub fn new(pair: &Pair, n_seq: usize) -> Self {
        Self {
            enroll: pair.enroll.clone(),
            auth: pair.auth.clone(),
            label: pair.label,
            group: pair.group(),
            n_seq,
            s_ekyt_ran: None,
            s_ekyt_tex: None,
            s_spatial: None,
        }
    }

    pub fn task(&self) -> Task {
        self.enroll.task
    }

    /// Embedding score of the pair's own task.
    pub fn ekyt(&self) -> Option<f64> {
        match self.task() {
            Task::Ran => self.s_ekyt_ran,
            Task::Tex => self.s_ekyt_tex,
        }
    }

    pub fn set_ekyt(&mut self, task: Task, score: f64) {
        match task {
            Task::Ran => self.s_ekyt_ran = Some(score),
            Task::Tex => self.s_ekyt_tex = Some(score),
        }
    }

    fn require(&self, score: Option<f64>, modality: &'static str) -> Result<f64, FusionError> {
        score.ok_or_else(|| FusionError::MissingModality {
            enroll: self.enroll.clone(),
            auth: self.auth.clone(),
            modality,
        })
    }
}

/// Fusion strategies; `Baseline` is the unfused embedding score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    Baseline,
    Weighted,
    Tree,
    CrossTask,
    Triple,
}

impl FusionMethod {
    pub const ALL: [FusionMethod; 5] = [
        FusionMethod::Baseline,
        FusionMethod::Weighted,
        FusionMethod::Tree,
        FusionMethod::CrossTask,
        FusionMethod::Triple,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMethod::Baseline => "baseline",
            FusionMethod::Weighted => "weighted",
            FusionMethod::Tree => "tree",
            FusionMethod::CrossTask => "cross",
            FusionMethod::Triple => "triple",
        }
    }

    /// Whether the method trains a classifier.
    pub fn is_learned(self) -> bool {
        matches!(
            self,
            FusionMethod::Tree | FusionMethod::CrossTask | FusionMethod::Triple
        )
    }

    pub fn recipe(self) -> Option<FeatureRecipe> {
        match self {
            FusionMethod::Tree | FusionMethod::CrossTask => Some(FeatureRecipe::TwoScore),
            FusionMethod::Triple => Some(FeatureRecipe::ThreeScore),
            _ => None,
        }
    }
}

impl std::fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FusionMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "baseline" | "ekyt" => Ok(FusionMethod::Baseline),
            "weighted" => Ok(FusionMethod::Weighted),
            "tree" => Ok(FusionMethod::Tree),
            "cross" | "cross_task" => Ok(FusionMethod::CrossTask),
            "triple" => Ok(FusionMethod::Triple),
            other => Err(format!("unknown fusion method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRecipe {
    TwoScore,
    ThreeScore,
}

impl FeatureRecipe {
    pub fn id(self) -> &'static str {
        match self {
            FeatureRecipe::TwoScore => "two_score_v1",
            FeatureRecipe::ThreeScore => "three_score_v1",
        }
    }

    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            FeatureRecipe::TwoScore => {
                &["s1", "s2", "s1*s2", "s1^2", "s2^2", "|s1-s2|", "min", "max"]
            }
            FeatureRecipe::ThreeScore => &[
                "a", "b", "c", "a*b", "a*c", "b*c", "a^2", "b^2", "c^2", "|a-b|", "|a-c|", "|b-c|",
                "a*b*c",
            ],
        }
    }
}

pub fn two_score_features(s1: f64, s2: f64) -> [f64; 8] {
    [
        s1,
        s2,
        s1 * s2,
        s1 * s1,
        s2 * s2,
        (s1 - s2).abs(),
        s1.min(s2),
        s1.max(s2),
    ]
}

pub fn three_score_features(a: f64, b: f64, c: f64) -> [f64; 13] {
    [
        a,
        b,
        c,
        a * b,
        a * c,
        b * c,
        a * a,
        b * b,
        c * c,
        (a - b).abs(),
        (a - c).abs(),
        (b - c).abs(),
        a * b * c,
    ]
}

/// Engineered feature row for a learned method. Tree fusion uses
/// (embedding of own task, spatial); cross-task uses (RAN, TEX); triple
/// uses (RAN, TEX, spatial).
pub fn engineer_features(v: &ScoreVector, method: FusionMethod) -> Result<Vec<f64>, FusionError> {
    match method {
        FusionMethod::Tree => {
            let e = v.require(v.ekyt(), "embedding")?;
            let s = v.require(v.s_spatial, "spatial")?;
            Ok(two_score_features(e, s).to_vec())
        }
        FusionMethod::CrossTask => {
            let r = v.require(v.s_ekyt_ran, "RAN embedding")?;
            let t = v.require(v.s_ekyt_tex, "TEX embedding")?;
            Ok(two_score_features(r, t).to_vec())
        }
        FusionMethod::Triple => {
            let r = v.require(v.s_ekyt_ran, "RAN embedding")?;
            let t = v.require(v.s_ekyt_tex, "TEX embedding")?;
            let s = v.require(v.s_spatial, "spatial")?;
            Ok(three_score_features(r, t, s).to_vec())
        }
        FusionMethod::Baseline | FusionMethod::Weighted => Err(FusionError::Tree(
            TreeError::InvalidData(format!("method {method} has no feature recipe")),
        )),
    }
}

pub fn weighted_fuse(s_ekyt: f64, s_spatial: f64, alpha: f64) -> Result<f64, FusionError> {
    if !(0.5..=1.0).contains(&alpha) {
        return Err(FusionError::AlphaOutOfRange(alpha));
    }
    Ok(alpha * s_ekyt + (1.0 - alpha) * s_spatial)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweep {
    pub best_alpha: f64,
    pub best_eer: f64,
    /// EER of the embedding score alone.
    pub eer_at_one: f64,
    /// EER at each grid alpha, ascending alpha.
    pub curve: Vec<(f64, f64)>,
}

/// Split fused scores by label.
pub fn split_by_label<'a>(
    vectors: impl IntoIterator<Item = &'a ScoreVector>,
    scores: impl IntoIterator<Item = f64>,
) -> (Vec<f64>, Vec<f64>) {
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for (v, s) in vectors.into_iter().zip(scores) {
        if v.label.is_genuine() {
            genuine.push(s);
        } else {
            impostor.push(s);
        }
    }
    (genuine, impostor)
}

/// EER at every alpha of the grid; the minimum wins, ties going to the
/// largest alpha.
pub fn sweep_alpha(vectors: &[ScoreVector]) -> Result<AlphaSweep, FusionError> {
    sweep_alpha_over(vectors, &AlphaGrid::default())
}

/// [`sweep_alpha`] over a narrower grid. `eer_at_one` is the EER at the
/// grid's largest alpha.
pub fn sweep_alpha_over(
    vectors: &[ScoreVector],
    grid: &AlphaGrid,
) -> Result<AlphaSweep, FusionError> {
    grid.validate()?;
    if vectors.is_empty() {
        return Err(FusionError::NoPairs);
    }
    let pairs: Vec<(f64, f64)> = vectors
        .iter()
        .map(|v| {
            Ok((
                v.require(v.ekyt(), "embedding")?,
                v.require(v.s_spatial, "spatial")?,
            ))
        })
        .collect::<Result<_, FusionError>>()?;
    let curve = (grid.min_percent..=grid.max_percent)
        .map(|k| {
            let alpha = k as f64 / 100.0;
            let fused = pairs.iter().map(|&(e, s)| alpha * e + (1.0 - alpha) * s);
            let (g, i) = split_by_label(vectors, fused);
            Ok((alpha, eer(&g, &i)?))
        })
        .collect::<Result<Vec<_>, FusionError>>()?;
    let mut best = curve.len() - 1;
    for j in (0..curve.len()).rev() {
        if curve[j].1 < curve[best].1 {
            best = j;
        }
    }
    Ok(AlphaSweep {
        best_alpha: curve[best].0,
        best_eer: curve[best].1,
        eer_at_one: curve[curve.len() - 1].1,
        curve,
    })
}

/// How the fusion classifier is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    Fixed(Candidate),
    Forest {
        kind: EnsembleKind,
        params: ForestParams,
    },
    Boosting(BoostingParams),
    /// Randomized search on the training pairs, then refit of the winner.
    Search {
        kind: EnsembleKind,
        space: SearchSpace,
        n_candidates: usize,
        cv_folds: usize,
    },
}

impl ModelSpec {
    pub fn kind(&self) -> EnsembleKind {
        match self {
            ModelSpec::Fixed(c) => c.kind,
            ModelSpec::Forest { kind, .. } | ModelSpec::Search { kind, .. } => *kind,
            ModelSpec::Boosting(_) => EnsembleKind::GradientBoosting,
        }
    }

    pub fn fit(
        &self,
        data: &TrainingSet,
        seed: u64,
    ) -> Result<(EnsembleModel, Option<SearchResult>), TreeError> {
        Ok(match self {
            ModelSpec::Fixed(c) => (c.fit(data, seed), None),
            ModelSpec::Forest { kind, params } => (fit_forest(data, *kind, params, seed), None),
            ModelSpec::Boosting(params) => (fit_boosting(data, params, seed), None),
            ModelSpec::Search {
                kind,
                space,
                n_candidates,
                cv_folds,
            } => {
                let result = randomized_search(data, *kind, space, *n_candidates, *cv_folds, seed)?;
                (result.best.fit(data, seed), Some(result))
            }
        })
    }
}

fn subjects(vectors: &[ScoreVector]) -> BTreeSet<&str> {
    vectors
        .iter()
        .flat_map(|v| [v.group.first(), v.group.second()])
        .collect()
}

/// Class-weighted training set of engineered features; groups are the
/// unordered subject pairs.
pub fn training_set(
    vectors: &[ScoreVector],
    method: FusionMethod,
) -> Result<TrainingSet, FusionError> {
    if vectors.is_empty() {
        return Err(FusionError::NoPairs);
    }
    let features = vectors
        .iter()
        .map(|v| engineer_features(v, method))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<bool> = vectors.iter().map(|v| v.label.is_genuine()).collect();
    let groups = vectors.iter().map(|v| v.group.to_string()).collect();
    Ok(
        TrainingSet::new(features, labels.clone(), vec![1.0; labels.len()], groups)?
            .with_class_weights(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeFusion {
    pub scores: Vec<f64>,
    pub model: EnsembleModel,
    pub search: Option<SearchResult>,
}

/// Train on `train`, return fused probabilities for `test`.
pub fn fuse_tree(
    train: &[ScoreVector],
    test: &[ScoreVector],
    method: FusionMethod,
    spec: &ModelSpec,
    seed: u64,
) -> Result<TreeFusion, FusionError> {
    let leaked: Vec<String> = subjects(train)
        .intersection(&subjects(test))
        .map(|s| s.to_string())
        .collect();
    if !leaked.is_empty() {
        return Err(FusionError::SubjectLeakage(leaked));
    }
    let data = training_set(train, method)?;
    let (model, search) = spec.fit(&data, seed)?;
    let scores = test
        .iter()
        .map(|v| Ok(model.predict_proba(&engineer_features(v, method)?)?))
        .collect::<Result<Vec<f64>, FusionError>>()?;
    Ok(TreeFusion {
        scores,
        model,
        search,
    })
}

fn other_task(task: Task) -> Task {
    match task {
        Task::Ran => Task::Tex,
        Task::Tex => Task::Ran,
    }
}

/// Fill the scores of `primary` from the same subject/round/session pairs
/// of the other task. Fields already present in `primary` are kept.
fn merge_tasks(
    primary: &[ScoreVector],
    other: &[ScoreVector],
) -> Result<Vec<ScoreVector>, FusionError> {
    let index: BTreeMap<(&RecordingKey, &RecordingKey), &ScoreVector> =
        other.iter().map(|v| ((&v.enroll, &v.auth), v)).collect();
    primary
        .iter()
        .map(|v| {
            let task = other_task(v.task());
            let (e, a) = (v.enroll.with_task(task), v.auth.with_task(task));
            let o = index
                .get(&(&e, &a))
                .ok_or_else(|| FusionError::MissingTask {
                    enroll: v.enroll.clone(),
                    auth: v.auth.clone(),
                    task,
                })?;
            let mut merged = v.clone();
            merged.s_ekyt_ran = v.s_ekyt_ran.or(o.s_ekyt_ran);
            merged.s_ekyt_tex = v.s_ekyt_tex.or(o.s_ekyt_tex);
            merged.s_spatial = v.s_spatial.or(o.s_spatial);
            Ok(merged)
        })
        .collect()
}

/// RAN and TEX embedding scores of every `primary` pair; spatial dropped.
pub fn cross_task_scores(
    primary: &[ScoreVector],
    other: &[ScoreVector],
) -> Result<Vec<ScoreVector>, FusionError> {
    let mut merged = merge_tasks(primary, other)?;
    for v in &mut merged {
        v.s_spatial = None;
        v.require(v.s_ekyt_ran, "RAN embedding")?;
        v.require(v.s_ekyt_tex, "TEX embedding")?;
    }
    Ok(merged)
}

/// RAN, TEX and spatial scores of every `primary` pair.
pub fn triple_scores(
    primary: &[ScoreVector],
    other: &[ScoreVector],
) -> Result<Vec<ScoreVector>, FusionError> {
    let merged = merge_tasks(primary, other)?;
    for v in &merged {
        v.require(v.s_ekyt_ran, "RAN embedding")?;
        v.require(v.s_ekyt_tex, "TEX embedding")?;
        v.require(v.s_spatial, "spatial")?;
    }
    Ok(merged)
}

const SCORE_HEADER: [&str; 12] = [
    "enroll_subject",
    "enroll_round",
    "enroll_session",
    "auth_subject",
    "auth_round",
    "auth_session",
    "task",
    "n_seq",
    "label",
    "s_ekyt_ran",
    "s_ekyt_tex",
    "s_spatial",
];

fn opt_cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

pub fn write_scores(path: &Path, vectors: &[ScoreVector]) -> Result<(), IngestError> {
    write_scores_to(
        std::io::BufWriter::new(crate::ingest::create(path)?),
        vectors,
    )
}

pub fn write_scores_to<W: Write>(writer: W, vectors: &[ScoreVector]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SCORE_HEADER)?;
    for v in vectors {
        w.write_record([
            v.enroll.subject_id.clone(),
            v.enroll.round.to_string(),
            v.enroll.session.to_string(),
            v.auth.subject_id.clone(),
            v.auth.round.to_string(),
            v.auth.session.to_string(),
            v.task().to_string(),
            v.n_seq.to_string(),
            v.label.as_str().to_string(),
            opt_cell(v.s_ekyt_ran),
            opt_cell(v.s_ekyt_tex),
            opt_cell(v.s_spatial),
        ])?;
    }
    w.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreVector>, IngestError> {
    read_scores_from(crate::ingest::open(path)?)
}

pub fn read_scores_from<R: Read>(reader: R) -> Result<Vec<ScoreVector>, IngestError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = r.headers()?.clone();
    let cols: Vec<usize> = SCORE_HEADER
        .iter()
        .map(|&n| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| IngestError::MissingColumn(n.into()))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(cols[i]).unwrap_or("");
        let bad = |i: usize| IngestError::BadValue {
            line,
            column: SCORE_HEADER[i].into(),
            value: cell(i).to_string(),
        };
        let int = |i: usize| cell(i).parse::<i64>().map_err(|_| bad(i));
        let opt = |i: usize| -> Result<Option<f64>, IngestError> {
            match cell(i) {
                "" => Ok(None),
                s => {
                    let v: f64 = s.parse().map_err(|_| bad(i))?;
                    if v.is_finite() {
                        Ok(Some(v))
                    } else {
                        Err(IngestError::NonFinite { line })
                    }
                }
            }
        };
        let task: Task = cell(6)
            .parse()
            .map_err(|source| IngestError::Key { line, source })?;
        let key = |s: usize| {
            RecordingKey::from_parts(cell(s), int(s + 1)?, int(s + 2)?, task)
                .map_err(|source| IngestError::Key { line, source })
        };
        let pair = Pair::new(key(0)?, key(3)?);
        let label: PairLabel = cell(8).parse().map_err(|_| bad(8))?;
        if label != pair.label {
            return Err(bad(8));
        }
        let n_seq = usize::try_from(int(7)?).map_err(|_| bad(7))?;
        let mut v = ScoreVector::new(&pair, n_seq);
        v.s_ekyt_ran = opt(9)?;
        v.s_ekyt_tex = opt(10)?;
        v.s_spatial = opt(11)?;
        if v.s_ekyt_ran.is_none() && v.s_ekyt_tex.is_none() && v.s_spatial.is_none() {
            return Err(IngestError::BadValue {
                line,
                column: "scores".into(),
                value: "all empty".into(),
            });
        }
        out.push(v);
    }
    Ok(out)
}

/// One fused similarity, as written by `fuse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedScore {
    pub enroll: RecordingKey,
    pub auth: RecordingKey,
    pub label: PairLabel,
    pub n_seq: usize,
    pub method: FusionMethod,
    /// Outer CV fold whose model produced the score, if any.
    pub fold: Option<usize>,
    pub score: f64,
}

impl FusedScore {
    pub fn group(&self) -> SubjectPair {
        SubjectPair::new(&self.enroll.subject_id, &self.auth.subject_id)
    }
}

const FUSED_HEADER: [&str; 11] = [
    "enroll_subject",
    "enroll_round",
    "enroll_session",
    "auth_subject",
    "auth_round",
    "auth_session",
    "task",
    "n_seq",
    "method",
    "fold",
    "label",
];

pub fn write_fused(path: &Path, fused: &[FusedScore]) -> Result<(), IngestError> {
    write_fused_to(std::io::BufWriter::new(crate::ingest::create(path)?), fused)
}

pub fn write_fused_to<W: Write>(writer: W, fused: &[FusedScore]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FUSED_HEADER.to_vec();
    header.push("score");
    w.write_record(&header)?;
    for f in fused {
        w.write_record([
            f.enroll.subject_id.clone(),
            f.enroll.round.to_string(),
            f.enroll.session.to_string(),
            f.auth.subject_id.clone(),
            f.auth.round.to_string(),
            f.auth.session.to_string(),
            f.enroll.task.to_string(),
            f.n_seq.to_string(),
            f.method.to_string(),
            f.fold.map_or(String::new(), |k| k.to_string()),
            f.label.as_str().to_string(),
            format!("{}", f.score),
        ])?;
    }
    w.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

pub fn read_fused(path: &Path) -> Result<Vec<FusedScore>, IngestError> {
    read_fused_from(crate::ingest::open(path)?)
}

pub fn read_fused_from<R: Read>(reader: R) -> Result<Vec<FusedScore>, IngestError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = r.headers()?.clone();
    let mut names: Vec<&str> = FUSED_HEADER.to_vec();
    names.push("score");
    let cols: Vec<usize> = names
        .iter()
        .map(|&n| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| IngestError::MissingColumn(n.into()))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(cols[i]).unwrap_or("");
        let bad = |i: usize| IngestError::BadValue {
            line,
            column: names[i].into(),
            value: cell(i).to_string(),
        };
        let int = |i: usize| cell(i).parse::<i64>().map_err(|_| bad(i));
        let task: Task = cell(6)
            .parse()
            .map_err(|source| IngestError::Key { line, source })?;
        let key = |s: usize| {
            RecordingKey::from_parts(cell(s), int(s + 1)?, int(s + 2)?, task)
                .map_err(|source| IngestError::Key { line, source })
        };
        let pair = Pair::new(key(0)?, key(3)?);
        let label: PairLabel = cell(10).parse().map_err(|_| bad(10))?;
        if label != pair.label {
            return Err(bad(10));
        }
        let score: f64 = cell(11).parse().map_err(|_| bad(11))?;
        if !score.is_finite() {
            return Err(IngestError::NonFinite { line });
        }
        out.push(FusedScore {
            enroll: pair.enroll,
            auth: pair.auth,
            label,
            n_seq: usize::try_from(int(7)?).map_err(|_| bad(7))?,
            method: cell(8).parse().map_err(|_| bad(8))?,
            fold: match cell(9) {
                "" => None,
                s => Some(s.parse().map_err(|_| bad(9))?),
            },
            score,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{fit_tree, TreeParams};

    fn vector(e: &str, a: &str, task: Task, ekyt: f64, spatial: f64) -> ScoreVector {
        let pair = Pair::new(
            RecordingKey::new(e, 1, 2, task).unwrap(),
            RecordingKey::new(a, 1, 1, task).unwrap(),
        );
        let mut v = ScoreVector::new(&pair, 1);
        v.set_ekyt(task, ekyt);
        v.s_spatial = Some(spatial);
        v
    }

    #[test]
    fn weighted_examples() {
        assert_eq!(weighted_fuse(0.3, 0.9, 1.0).unwrap(), 0.3);
        assert_eq!(weighted_fuse(0.8, 0.2, 0.5).unwrap(), 0.5);
        for k in 50..=100 {
            let a = k as f64 / 100.0;
            assert!((weighted_fuse(0.42, 0.42, a).unwrap() - 0.42).abs() < 1e-15);
        }
        assert_eq!(
            weighted_fuse(0.1, 0.1, 0.49),
            Err(FusionError::AlphaOutOfRange(0.49))
        );
    }

    #[test]
    fn feature_examples() {
        assert_eq!(
            two_score_features(1.0, 1.0),
            [1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0]
        );
        assert_eq!(two_score_features(0.0, 0.0), [0.0; 8]);
        let f = three_score_features(2.0, 3.0, 5.0);
        assert_eq!(
            f,
            [2.0, 3.0, 5.0, 6.0, 10.0, 15.0, 4.0, 9.0, 25.0, 1.0, 3.0, 2.0, 30.0]
        );
        assert_eq!(FeatureRecipe::ThreeScore.feature_names().len(), 13);
        let v = vector("A", "B", Task::Ran, 0.5, 0.25);
        assert!(matches!(
            engineer_features(&v, FusionMethod::CrossTask),
            Err(FusionError::MissingModality { .. })
        ));
    }

    #[test]
    fn sweep_prefers_one_for_perfect_embedding() {
        let vs = vec![
            vector("A", "A", Task::Ran, 0.9, 0.1),
            vector("B", "B", Task::Ran, 0.8, 0.7),
            vector("A", "B", Task::Ran, 0.2, 0.9),
            vector("B", "A", Task::Ran, 0.1, 0.3),
        ];
        let s = sweep_alpha(&vs).unwrap();
        assert_eq!(s.curve.len(), 51);
        assert_eq!((s.best_alpha, s.best_eer), (1.0, 0.0));
        assert!(s.best_eer <= s.eer_at_one);
    }

    #[test]
    fn leakage_is_rejected() {
        let train = vec![
            vector("A", "B", Task::Ran, 0.1, 0.2),
            vector("A", "A", Task::Ran, 0.9, 0.8),
        ];
        let test = vec![vector("B", "C", Task::Ran, 0.1, 0.2)];
        let spec = ModelSpec::Fixed(Candidate {
            kind: EnsembleKind::RandomForest,
            n_trees: 2,
            max_depth: 2,
            min_leaf: 1,
            learning_rate: 0.1,
        });
        assert_eq!(
            fuse_tree(&train, &test, FusionMethod::Tree, &spec, 0),
            Err(FusionError::SubjectLeakage(vec!["B".into()]))
        );
    }

    #[test]
    fn degenerate_forest_fusion_matches_single_tree() {
        let mut train = Vec::new();
        for (i, s) in ["A", "B", "C", "D"].iter().enumerate() {
            for (j, t) in ["A", "B", "C", "D"].iter().enumerate() {
                let genuine = s == t;
                let e = if genuine { 0.6 } else { 0.4 } + 0.03 * (i as f64 - j as f64);
                let sp = if genuine { 0.9 } else { 0.2 } + 0.01 * i as f64;
                train.push(vector(s, t, Task::Ran, e, sp));
            }
        }
        let test = vec![
            vector("E", "E", Task::Ran, 0.55, 0.8),
            vector("E", "F", Task::Ran, 0.5, 0.3),
        ];
        let params = ForestParams {
            n_trees: 1,
            max_depth: 5,
            min_leaf: 1,
            max_features: None,
            bootstrap: false,
        };
        let spec = ModelSpec::Forest {
            kind: EnsembleKind::RandomForest,
            params,
        };
        let fused = fuse_tree(&train, &test, FusionMethod::Tree, &spec, 4).unwrap();
        let data = training_set(&train, FusionMethod::Tree).unwrap();
        let tree = fit_tree(
            &data,
            &TreeParams {
                max_depth: 5,
                ..Default::default()
            },
            4,
        );
        for (v, s) in test.iter().zip(&fused.scores) {
            let row = engineer_features(v, FusionMethod::Tree).unwrap();
            assert_eq!(tree.predict_proba(&row).unwrap(), *s);
        }
    }

    #[test]
    fn cross_and_triple_merge() {
        let tex = vec![vector("A", "B", Task::Tex, 0.3, 0.6)];
        let ran = vec![vector("A", "B", Task::Ran, 0.4, 0.6)];
        let c = cross_task_scores(&tex, &ran).unwrap();
        assert_eq!(
            (c[0].s_ekyt_ran, c[0].s_ekyt_tex, c[0].s_spatial),
            (Some(0.4), Some(0.3), None)
        );
        assert!(!c[0].label.is_genuine());
        let t = triple_scores(&tex, &ran).unwrap();
        assert_eq!(t[0].s_spatial, Some(0.6));
        assert!(matches!(
            cross_task_scores(&tex, &[]),
            Err(FusionError::MissingTask {
                task: Task::Ran,
                ..
            })
        ));
    }

    #[test]
    fn score_files_round_trip() {
        let mut vs = vec![
            vector("A", "B", Task::Tex, 0.1 + 0.2, -0.5),
            vector("B", "B", Task::Tex, 1.0 / 3.0, 0.25),
        ];
        vs[1].s_spatial = None;
        let mut buf = Vec::new();
        write_scores_to(&mut buf, &vs).unwrap();
        assert_eq!(read_scores_from(buf.as_slice()).unwrap(), vs);

        let fused: Vec<FusedScore> = vs
            .iter()
            .enumerate()
            .map(|(i, v)| FusedScore {
                enroll: v.enroll.clone(),
                auth: v.auth.clone(),
                label: v.label,
                n_seq: 1,
                method: FusionMethod::Triple,
                fold: if i == 0 { Some(3) } else { None },
                score: 0.1 * i as f64 + 1e-17,
            })
            .collect();
        let mut buf = Vec::new();
        write_fused_to(&mut buf, &fused).unwrap();
        assert_eq!(read_fused_from(buf.as_slice()).unwrap(), fused);
    }
}
