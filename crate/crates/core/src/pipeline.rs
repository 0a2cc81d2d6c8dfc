//! Batch orchestration: offset features, pair scores, cross-validated
//! fusion and the run report. Each stage's output is cached under the
//! output directory, keyed by a SHA-256 of everything it depends on.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embed::{embed_similarity, AggregatedEmbedding, EmbedError, EmbeddingIndex, N_SEQ_GRID};
use crate::eval::{
    form_pairs, render_table, run_cv, CvParams, EvalError, EvalReport, Pair, DEFAULT_FAR_TARGET,
};
use crate::fusion::{
    cross_task_scores, read_scores, triple_scores, write_fused, write_scores, AlphaGrid,
    FeatureRecipe, FusedScore, FusionError, FusionMethod, ModelSpec, ScoreVector,
};
use crate::ingest::{parse_embeddings, IngestError, Manifest};
use crate::offset::{
    offset_similarity, recording_offset_features, IdtParams, OffsetError, OffsetFeatureVector,
    OffsetScope,
};
use crate::synth::SynthError;
use crate::trees::{EnsembleKind, SearchSpace, TreeError};
use crate::types::{GazeRecording, RecordingKey, Task};

pub const RUN_SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

const CACHE_DIR: &str = ".gazefuse-cache";
pub const OFFSETS_FILE: &str = "offsets.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const FUSED_FILE: &str = "fused.csv";
pub const EVALUATIONS_FILE: &str = "evaluations.json";
pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table.csv";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("{key}: {source}")]
    Offset {
        key: RecordingKey,
        #[source]
        source: OffsetError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}: {1}")]
    Json(PathBuf, String),
}

/// Broad error classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Validation,
    Compute,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Io => 3,
            ErrorCategory::Validation => 4,
            ErrorCategory::Compute => 5,
        }
    }
}

fn eval_category(e: &EvalError) -> ErrorCategory {
    match e {
        EvalError::MissingSession(..) | EvalError::TooFewSubjects { .. } => {
            ErrorCategory::Validation
        }
        EvalError::InvalidFarTarget(_) => ErrorCategory::Config,
        _ => ErrorCategory::Compute,
    }
}

impl PipelineError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            PipelineError::Config(_) | PipelineError::Synth(_) => ErrorCategory::Config,
            PipelineError::Io { .. } => ErrorCategory::Io,
            PipelineError::Ingest(e) if e.is_io() => ErrorCategory::Io,
            PipelineError::Ingest(_)
            | PipelineError::Embed(_)
            | PipelineError::Offset { .. }
            | PipelineError::Json(..) => ErrorCategory::Validation,
            PipelineError::Eval(e) => eval_category(e),
            PipelineError::Fusion(e) => match e {
                FusionError::AlphaOutOfRange(_) => ErrorCategory::Config,
                FusionError::Eval(e) => eval_category(e),
                FusionError::Tree(TreeError::InsufficientGroups { .. }) => {
                    ErrorCategory::Validation
                }
                FusionError::Tree(_) => ErrorCategory::Compute,
                _ => ErrorCategory::Validation,
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.category().exit_code()
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Which samples feed the offset statistics of a pair at a given `n_seq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetWindows {
    /// The first `n_seq` windows, the same span the embeddings cover.
    #[default]
    Aligned,
    /// The whole recording regardless of `n_seq`.
    Recording,
}

impl OffsetWindows {
    fn row_n_seq(self, n_seq: usize) -> Option<usize> {
        match self {
            OffsetWindows::Aligned => Some(n_seq),
            OffsetWindows::Recording => None,
        }
    }
}

/// Everything a batch run depends on. Every field has a default, so `{}` is
/// a valid config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    /// Excluded from the config hash and the report.
    pub output_dir: PathBuf,
    pub tasks: Vec<Task>,
    pub round: u32,
    pub n_seq: Vec<usize>,
    pub methods: Vec<FusionMethod>,
    pub model: ModelSpec,
    pub idt: IdtParams,
    pub offset_windows: OffsetWindows,
    pub alpha_grid: AlphaGrid,
    pub far_target: f64,
    pub k: usize,
    pub seed: u64,
}

/// Default classifier: a small randomized search over boosted trees.
pub fn default_model() -> ModelSpec {
    search_model(EnsembleKind::GradientBoosting)
}

/// A small randomized search over ensembles of `kind`.
pub fn search_model(kind: EnsembleKind) -> ModelSpec {
    ModelSpec::Search {
        kind,
        space: SearchSpace {
            n_trees: (50, 200),
            max_depth: (2, 6),
            ..SearchSpace::default()
        },
        n_candidates: 8,
        cv_folds: 3,
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.json"),
            output_dir: PathBuf::from("gazefuse-out"),
            tasks: Task::ALL.to_vec(),
            round: 1,
            n_seq: N_SEQ_GRID.to_vec(),
            methods: FusionMethod::ALL.to_vec(),
            model: default_model(),
            idt: IdtParams::default(),
            offset_windows: OffsetWindows::default(),
            alpha_grid: AlphaGrid::default(),
            far_target: DEFAULT_FAR_TARGET,
            k: 4,
            seed: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        write_file(path, text.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.tasks.is_empty() {
            return bad("no tasks selected".into());
        }
        if self.methods.is_empty() {
            return bad("no fusion methods selected".into());
        }
        if self.n_seq.is_empty() || self.n_seq.contains(&0) {
            return bad(format!(
                "n_seq grid must be non-empty and positive, got {:?}",
                self.n_seq
            ));
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(self.far_target > 0.0 && self.far_target <= 1.0) {
            return bad(format!("FAR target {} outside (0, 1]", self.far_target));
        }
        if !(self.idt.dispersion_threshold > 0.0 && self.idt.min_duration_ms >= 0.0) {
            return bad(format!("invalid IDT parameters {:?}", self.idt));
        }
        self.alpha_grid
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if let ModelSpec::Search {
            space,
            n_candidates,
            cv_folds,
            ..
        } = &self.model
        {
            if *n_candidates == 0 || *cv_folds < 2 {
                return bad("search needs at least one candidate and two folds".into());
            }
            let ordered = space.n_trees.0 <= space.n_trees.1
                && space.max_depth.0 <= space.max_depth.1
                && space.min_leaf.0 <= space.min_leaf.1
                && space.min_leaf.0 >= 1
                && space.learning_rate.0 > 0.0
                && space.learning_rate.0 <= space.learning_rate.1;
            if !ordered {
                return bad(format!("invalid search space {space:?}"));
            }
        }
        Ok(())
    }

    /// Tasks whose scores are needed: the selected ones, plus the other task
    /// when a cross-task method is requested.
    pub fn scored_tasks(&self) -> Vec<Task> {
        let cross = self
            .methods
            .iter()
            .any(|m| matches!(m, FusionMethod::CrossTask | FusionMethod::Triple));
        if cross {
            Task::ALL.to_vec()
        } else {
            self.tasks
                .iter()
                .copied()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        }
    }

    /// The config as embedded in reports: canonical key order, no output
    /// directory.
    pub fn report_view(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
        }
        v
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(&self.report_view()).expect("value serializes"))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| PipelineError::io(path, e))
}

// ---------------------------------------------------------------------------
// Offsets

/// Offset features of one recording over a given span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetRow {
    pub recording: RecordingKey,
    /// `None` for the whole recording.
    pub n_seq: Option<usize>,
    pub features: OffsetFeatureVector,
}

pub type OffsetLookup = BTreeMap<(RecordingKey, Option<usize>), OffsetFeatureVector>;

pub fn offset_lookup(rows: &[OffsetRow]) -> OffsetLookup {
    rows.iter()
        .map(|r| ((r.recording.clone(), r.n_seq), r.features))
        .collect()
}

/// Features of every target-bearing recording for each span in `spans`
/// (`None` = whole recording), sorted by recording then span.
pub fn compute_offsets(
    recordings: &[GazeRecording],
    params: &IdtParams,
    spans: &[Option<usize>],
) -> Result<Vec<OffsetRow>> {
    let mut rows = recordings
        .par_iter()
        .filter(|r| r.has_targets())
        .flat_map_iter(|r| {
            spans.iter().map(move |&n| {
                let scope = n.map_or(OffsetScope::Recording, OffsetScope::FirstWindows);
                recording_offset_features(r, params, scope)
                    .map(|features| OffsetRow {
                        recording: r.key().clone(),
                        n_seq: n,
                        features,
                    })
                    .map_err(|source| PipelineError::Offset {
                        key: r.key().clone(),
                        source,
                    })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| (&a.recording, a.n_seq).cmp(&(&b.recording, b.n_seq)));
    Ok(rows)
}

const OFFSET_HEADER: [&str; 11] = [
    "subject", "round", "session", "task", "n_seq", "mean", "median", "std", "min", "max", "iqr",
];

pub fn write_offsets(path: &Path, rows: &[OffsetRow]) -> Result<()> {
    let mut buf = Vec::new();
    write_offsets_to(&mut buf, rows)?;
    write_file(path, &buf)
}

pub fn write_offsets_to<W: Write>(writer: W, rows: &[OffsetRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(OFFSET_HEADER).map_err(IngestError::from)?;
    for r in rows {
        let mut rec = vec![
            r.recording.subject_id.clone(),
            r.recording.round.to_string(),
            r.recording.session.to_string(),
            r.recording.task.to_string(),
            r.n_seq.map_or(String::new(), |n| n.to_string()),
        ];
        rec.extend(r.features.to_array().iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(IngestError::from)?;
    }
    w.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

pub fn read_offsets(path: &Path) -> Result<Vec<OffsetRow>> {
    let file = std::fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    read_offsets_from(std::io::BufReader::new(file))
}

pub fn read_offsets_from<R: Read>(reader: R) -> Result<Vec<OffsetRow>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = r.headers().map_err(IngestError::from)?.clone();
    let cols: Vec<usize> = OFFSET_HEADER
        .iter()
        .map(|&n| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| IngestError::MissingColumn(n.into()))
        })
        .collect::<std::result::Result<_, _>>()?;
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record.map_err(IngestError::from)?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(cols[i]).unwrap_or("");
        let bad = |i: usize| IngestError::BadValue {
            line,
            column: OFFSET_HEADER[i].into(),
            value: cell(i).to_string(),
        };
        let int = |i: usize| cell(i).parse::<i64>().map_err(|_| bad(i));
        let task: Task = cell(3).parse().map_err(|_| bad(3))?;
        let recording = RecordingKey::from_parts(cell(0), int(1)?, int(2)?, task)
            .map_err(|source| IngestError::Key { line, source })?;
        let n_seq = match cell(4) {
            "" => None,
            s => Some(s.parse::<usize>().map_err(|_| bad(4))?),
        };
        let mut a = [0.0; 6];
        for (j, v) in a.iter_mut().enumerate() {
            *v = cell(5 + j).parse::<f64>().map_err(|_| bad(5 + j))?;
            if !v.is_finite() {
                return Err(IngestError::NonFinite { line }.into());
            }
        }
        rows.push(OffsetRow {
            recording,
            n_seq,
            features: OffsetFeatureVector::from_array(a),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Pair scores

/// Score every pair at one `n_seq`: cosine of the aggregated embeddings for
/// the pair's task, and the offset similarity of the subjects' RAN
/// recordings when `offsets` has both. `offset_span` selects the offset row.
pub fn score_pairs(
    pairs: &[Pair],
    n_seq: usize,
    embeddings: &EmbeddingIndex,
    offsets: Option<&OffsetLookup>,
    offset_span: Option<usize>,
) -> Result<Vec<ScoreVector>> {
    let keys: BTreeSet<&RecordingKey> = pairs.iter().flat_map(|p| [&p.enroll, &p.auth]).collect();
    let aggregated: BTreeMap<&RecordingKey, AggregatedEmbedding> = keys
        .into_par_iter()
        .map(|k| Ok((k, embeddings.aggregate(k, n_seq)?)))
        .collect::<Result<_>>()?;
    pairs
        .iter()
        .map(|p| {
            let mut v = ScoreVector::new(p, n_seq);
            v.set_ekyt(
                p.enroll.task,
                embed_similarity(&aggregated[&p.enroll], &aggregated[&p.auth])?,
            );
            if let Some(table) = offsets {
                let get = |k: &RecordingKey| table.get(&(k.with_task(Task::Ran), offset_span));
                if let (Some(a), Some(b)) = (get(&p.enroll), get(&p.auth)) {
                    v.s_spatial = Some(offset_similarity(a, b));
                }
            }
            Ok(v)
        })
        .collect()
}

/// Score vectors for every scored task and `n_seq`, ordered by task, then
/// `n_seq`, then pair.
pub fn score_all(
    config: &RunConfig,
    keys: &[RecordingKey],
    embeddings: &EmbeddingIndex,
    offsets: &OffsetLookup,
) -> Result<Vec<ScoreVector>> {
    let mut out = Vec::new();
    for task in config.scored_tasks() {
        let pairs = form_pairs(keys, task, config.round)?;
        for &n in &config.n_seq {
            let span = config.offset_windows.row_n_seq(n);
            out.extend(score_pairs(&pairs, n, embeddings, Some(offsets), span)?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Fusion and evaluation

/// Scores of `task` at `n_seq` prepared for `method`.
pub fn method_inputs(
    scores: &[ScoreVector],
    task: Task,
    n_seq: usize,
    method: FusionMethod,
) -> Result<Vec<ScoreVector>> {
    let select = |t: Task| -> Vec<ScoreVector> {
        scores
            .iter()
            .filter(|v| v.task() == t && v.n_seq == n_seq)
            .cloned()
            .collect()
    };
    let primary = select(task);
    if primary.is_empty() {
        return Err(FusionError::NoPairs.into());
    }
    Ok(match method {
        FusionMethod::CrossTask | FusionMethod::Triple => {
            let other = select(match task {
                Task::Ran => Task::Tex,
                Task::Tex => Task::Ran,
            });
            if method == FusionMethod::CrossTask {
                cross_task_scores(&primary, &other)?
            } else {
                triple_scores(&primary, &other)?
            }
        }
        _ => primary,
    })
}

/// Cross-validated fusion of one configuration.
pub fn evaluate_one(
    scores: &[ScoreVector],
    task: Task,
    n_seq: usize,
    method: FusionMethod,
    model: &ModelSpec,
    params: &CvParams,
) -> Result<(EvalReport, Vec<FusedScore>)> {
    let inputs = method_inputs(scores, task, n_seq, method)?;
    let outcome = run_cv(&inputs, method, model, params)?;
    let report = EvalReport::from_outcome(
        &outcome,
        task,
        method,
        n_seq,
        Some(model.kind()),
        params.far_target,
    );
    Ok((report, outcome.fused))
}

/// Every (task, n_seq, method) of the config, in that order.
pub fn evaluate_all(
    config: &RunConfig,
    scores: &[ScoreVector],
) -> Result<(Vec<EvalReport>, Vec<FusedScore>)> {
    let params = CvParams {
        k: config.k,
        seed: config.seed,
        far_target: config.far_target,
        alpha_grid: config.alpha_grid,
    };
    let mut jobs = Vec::new();
    for &task in &config.tasks {
        for &n in &config.n_seq {
            for &m in &config.methods {
                jobs.push((task, n, m));
            }
        }
    }
    let results = jobs
        .par_iter()
        .map(|&(task, n, m)| evaluate_one(scores, task, n, m, &config.model, &params))
        .collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::with_capacity(results.len());
    let mut fused = Vec::new();
    for (r, f) in results {
        reports.push(r);
        fused.extend(f);
    }
    Ok((reports, fused))
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeInfo {
    pub id: String,
    pub features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub recipes: Vec<RecipeInfo>,
    pub offset_features: Vec<String>,
    pub embedding_similarity: String,
    pub offset_similarity: String,
    pub stage_keys: BTreeMap<String, String>,
    pub reports: Vec<EvalReport>,
}

impl RunReport {
    pub fn new(
        config: &RunConfig,
        stage_keys: BTreeMap<String, String>,
        reports: Vec<EvalReport>,
    ) -> Self {
        let recipes = [FeatureRecipe::TwoScore, FeatureRecipe::ThreeScore]
            .into_iter()
            .filter(|r| config.methods.iter().any(|m| m.recipe() == Some(*r)))
            .map(|r| RecipeInfo {
                id: r.id().to_string(),
                features: r.feature_names().iter().map(|s| s.to_string()).collect(),
            })
            .collect();
        Self {
            schema_version: RUN_SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            config_hash: config.hash(),
            config: config.report_view(),
            seed: config.seed,
            recipes,
            offset_features: ["mean", "median", "std", "min", "max", "iqr"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            embedding_similarity: "cosine".into(),
            offset_similarity: "1/(1+euclidean)".into(),
            stage_keys,
            reports,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Json(path.to_path_buf(), e.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Stage caching

/// Whether each stage was recomputed or read back from the cache.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageLog {
    pub computed: Vec<&'static str>,
    pub cached: Vec<&'static str>,
}

struct Stages<'a> {
    dir: &'a Path,
    force: bool,
    log: StageLog,
}

impl Stages<'_> {
    fn key_path(&self, stage: &str) -> PathBuf {
        self.dir.join(CACHE_DIR).join(format!("{stage}.sha256"))
    }

    /// Read `outputs` back if the recorded key matches, otherwise compute
    /// and record the key after the outputs are written.
    fn run<T>(
        &mut self,
        stage: &'static str,
        key: &str,
        outputs: &[&Path],
        load: impl FnOnce() -> Result<T>,
        compute: impl FnOnce() -> Result<T>,
    ) -> Result<T> {
        let key_path = self.key_path(stage);
        let fresh = !self.force
            && std::fs::read_to_string(&key_path).is_ok_and(|k| k.trim() == key)
            && outputs.iter().all(|p| p.is_file());
        if fresh {
            if let Ok(value) = load() {
                self.log.cached.push(stage);
                return Ok(value);
            }
        }
        let _ = std::fs::remove_file(&key_path);
        let value = compute()?;
        write_file(&key_path, format!("{key}\n").as_bytes())?;
        self.log.computed.push(stage);
        Ok(value)
    }
}

#[derive(Default)]
struct KeyBuilder(Sha256);

impl KeyBuilder {
    fn part(mut self, label: &str, bytes: &[u8]) -> Self {
        // Length-prefixed so part boundaries cannot shift.
        self.0.update((label.len() as u64).to_le_bytes());
        self.0.update(label.as_bytes());
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    fn json<T: Serialize>(self, label: &str, value: &T) -> Self {
        self.part(label, &serde_json::to_vec(value).expect("serializes"))
    }

    fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

/// Result of [`run_pipeline`].
#[derive(Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub table: String,
    pub stages: StageLog,
}

fn offset_spans(config: &RunConfig) -> Vec<Option<usize>> {
    let spans: BTreeSet<Option<usize>> = config
        .n_seq
        .iter()
        .map(|&n| config.offset_windows.row_n_seq(n))
        .collect();
    spans.into_iter().collect()
}

/// Run every stage and write `offsets.csv`, `scores.csv`, `fused.csv`,
/// `report.json` and `table.csv` into the output directory. Stages whose
/// inputs are unchanged are read back unless `force` is set.
pub fn run_pipeline(config: &RunConfig, force: bool) -> Result<RunOutput> {
    config.validate()?;
    let manifest = Manifest::load(&config.manifest)?;
    let out = config.output_dir.as_path();
    std::fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;
    let mut stages = Stages {
        dir: out,
        force,
        log: StageLog::default(),
    };
    let mut stage_keys = BTreeMap::new();

    let mut offsets_key = KeyBuilder::default()
        .part("stage", b"offsets/1")
        .json("idt", &config.idt)
        .json("spans", &offset_spans(config));
    for entry in &manifest.recordings {
        let path = manifest.resolve(&entry.path);
        let bytes = read_file(&path)?;
        offsets_key = offsets_key
            .json(
                "entry",
                &(
                    &entry.subject,
                    entry.round,
                    entry.session,
                    entry.task,
                    entry.rate_hz,
                ),
            )
            .part("data", &bytes);
    }
    let offsets_key = offsets_key.finish();
    let offsets_path = out.join(OFFSETS_FILE);
    let offsets = stages.run(
        "offsets",
        &offsets_key,
        &[&offsets_path],
        || read_offsets(&offsets_path),
        || {
            let recordings = manifest.load_recordings()?;
            let rows = compute_offsets(&recordings, &config.idt, &offset_spans(config))?;
            write_offsets(&offsets_path, &rows)?;
            Ok(rows)
        },
    )?;
    stage_keys.insert("offsets".to_string(), offsets_key.clone());

    let embeddings_path = manifest
        .embeddings_path()
        .ok_or_else(|| IngestError::Manifest("manifest lists no embeddings file".into()))?;
    let scores_key = KeyBuilder::default()
        .part("stage", b"scores/1")
        .part("offsets", offsets_key.as_bytes())
        .part("embeddings", &read_file(&embeddings_path)?)
        .json("tasks", &config.scored_tasks())
        .json("round", &config.round)
        .json("n_seq", &config.n_seq)
        .json("offset_windows", &config.offset_windows)
        .finish();
    let scores_path = out.join(SCORES_FILE);
    let scores = stages.run(
        "scores",
        &scores_key,
        &[&scores_path],
        || Ok(read_scores(&scores_path)?),
        || {
            let index = EmbeddingIndex::new(parse_embeddings(&embeddings_path)?);
            let keys: Vec<RecordingKey> = manifest
                .recordings
                .iter()
                .map(|e| {
                    e.key()
                        .map_err(|err| IngestError::Manifest(err.to_string()))
                })
                .collect::<std::result::Result<_, _>>()?;
            let scores = score_all(config, &keys, &index, &offset_lookup(&offsets))?;
            write_scores(&scores_path, &scores)?;
            Ok(scores)
        },
    )?;
    stage_keys.insert("scores".to_string(), scores_key.clone());

    let eval_key = KeyBuilder::default()
        .part("stage", b"evaluate/1")
        .part("scores", scores_key.as_bytes())
        .json("tasks", &config.tasks)
        .json("n_seq", &config.n_seq)
        .json("methods", &config.methods)
        .json("model", &config.model)
        .json("alpha_grid", &config.alpha_grid)
        .json("far_target", &config.far_target)
        .json("k", &config.k)
        .json("seed", &config.seed)
        .finish();
    let fused_path = out.join(FUSED_FILE);
    let evals_path = out.join(EVALUATIONS_FILE);
    let reports = stages.run(
        "evaluate",
        &eval_key,
        &[&fused_path, &evals_path],
        || {
            let bytes = read_file(&evals_path)?;
            serde_json::from_slice::<Vec<EvalReport>>(&bytes)
                .map_err(|e| PipelineError::Json(evals_path.clone(), e.to_string()))
        },
        || {
            let (reports, fused) = evaluate_all(config, &scores)?;
            write_fused(&fused_path, &fused)?;
            let json = serde_json::to_vec_pretty(&reports).expect("reports serialize");
            write_file(&evals_path, &json)?;
            Ok(reports)
        },
    )?;
    stage_keys.insert("evaluate".to_string(), eval_key);

    let report = RunReport::new(config, stage_keys, reports);
    write_file(&out.join(REPORT_FILE), report.to_json().as_bytes())?;
    let table = render_table(&report.reports);
    write_file(&out.join(TABLE_FILE), table.as_bytes())?;
    Ok(RunOutput {
        report,
        table,
        stages: stages.log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};
    use crate::trees::Candidate;

    #[test]
    fn config_round_trips_and_defaults_fill_in() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        assert_eq!(serde_json::from_str::<RunConfig>("{}").unwrap(), c);
        let partial: RunConfig = serde_json::from_str(r#"{"k": 5, "seed": 9}"#).unwrap();
        assert_eq!((partial.k, partial.seed, partial.round), (5, 9, 1));
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
        c.validate().unwrap();
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let b = RunConfig {
            output_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig {
            seed: 2,
            ..a.clone()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for c in [
            RunConfig {
                k: 1,
                ..Default::default()
            },
            RunConfig {
                n_seq: vec![0],
                ..Default::default()
            },
            RunConfig {
                far_target: 0.0,
                ..Default::default()
            },
            RunConfig {
                methods: vec![],
                ..Default::default()
            },
            RunConfig {
                alpha_grid: AlphaGrid {
                    min_percent: 40,
                    max_percent: 100,
                },
                ..Default::default()
            },
        ] {
            let e = c.validate().unwrap_err();
            assert_eq!(e.exit_code(), 2, "{e}");
        }
    }

    #[test]
    fn offsets_csv_round_trips() {
        let corpus = generate(&SynthConfig {
            n_subjects: 2,
            duration_s: 10.0,
            ..Default::default()
        })
        .unwrap();
        let rows =
            compute_offsets(&corpus.recordings, &IdtParams::default(), &[None, Some(1)]).unwrap();
        // Two subjects, two sessions, RAN only, two spans.
        assert_eq!(rows.len(), 8);
        let mut buf = Vec::new();
        write_offsets_to(&mut buf, &rows).unwrap();
        assert_eq!(read_offsets_from(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn spatial_score_comes_from_ran_recordings() {
        let corpus = generate(&SynthConfig {
            n_subjects: 3,
            duration_s: 10.0,
            ..Default::default()
        })
        .unwrap();
        let keys: Vec<RecordingKey> = corpus.recordings.iter().map(|r| r.key().clone()).collect();
        let index = EmbeddingIndex::new(corpus.embeddings.clone());
        let rows = compute_offsets(&corpus.recordings, &IdtParams::default(), &[Some(2)]).unwrap();
        let lookup = offset_lookup(&rows);
        let tex = form_pairs(&keys, Task::Tex, 1).unwrap();
        let scored = score_pairs(&tex, 2, &index, Some(&lookup), Some(2)).unwrap();
        for v in &scored {
            let a = lookup[&(v.enroll.with_task(Task::Ran), Some(2))];
            let b = lookup[&(v.auth.with_task(Task::Ran), Some(2))];
            assert_eq!(v.s_spatial, Some(offset_similarity(&a, &b)));
            assert!(v.s_ekyt_tex.is_some() && v.s_ekyt_ran.is_none());
        }
        // Without a matching span there is no spatial score.
        let none = score_pairs(&tex, 2, &index, Some(&lookup), Some(3)).unwrap();
        assert!(none.iter().all(|v| v.s_spatial.is_none()));
    }

    fn small_run(dir: &Path) -> RunConfig {
        let corpus = generate(&SynthConfig {
            n_subjects: 8,
            duration_s: 10.0,
            ..Default::default()
        })
        .unwrap();
        corpus.write(&dir.join("corpus")).unwrap();
        RunConfig {
            manifest: dir.join("corpus/manifest.json"),
            output_dir: dir.join("out"),
            n_seq: vec![1, 2],
            model: ModelSpec::Fixed(Candidate {
                kind: EnsembleKind::RandomForest,
                n_trees: 10,
                max_depth: 3,
                min_leaf: 2,
                learning_rate: 0.1,
            }),
            far_target: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn pipeline_caches_stages_and_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let config = small_run(dir.path());
        let first = run_pipeline(&config, false).unwrap();
        assert_eq!(first.stages.computed, ["offsets", "scores", "evaluate"]);
        assert_eq!(first.report.reports.len(), 2 * 2 * 5);
        let report_bytes = std::fs::read(config.output_dir.join(REPORT_FILE)).unwrap();
        let fused_bytes = std::fs::read(config.output_dir.join(FUSED_FILE)).unwrap();

        let second = run_pipeline(&config, false).unwrap();
        assert_eq!(second.stages.cached, ["offsets", "scores", "evaluate"]);
        assert_eq!(
            std::fs::read(config.output_dir.join(REPORT_FILE)).unwrap(),
            report_bytes
        );

        let forced = run_pipeline(&config, true).unwrap();
        assert_eq!(forced.stages.computed.len(), 3);
        assert_eq!(
            std::fs::read(config.output_dir.join(REPORT_FILE)).unwrap(),
            report_bytes
        );
        assert_eq!(
            std::fs::read(config.output_dir.join(FUSED_FILE)).unwrap(),
            fused_bytes
        );

        // A change to the evaluation settings reuses the earlier stages.
        let reseeded = RunConfig { seed: 5, ..config };
        let third = run_pipeline(&reseeded, false).unwrap();
        assert_eq!(third.stages.cached, ["offsets", "scores"]);
        assert_eq!(third.stages.computed, ["evaluate"]);
    }

    #[test]
    fn missing_manifest_is_an_io_error() {
        let config = RunConfig {
            manifest: "/nonexistent/manifest.json".into(),
            ..Default::default()
        };
        assert_eq!(run_pipeline(&config, false).unwrap_err().exit_code(), 3);
    }
}
