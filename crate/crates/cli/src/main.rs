//! `gazefuse`: batch front end for the gaze-offset / embedding fusion
//! pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gazefuse_core::embed::EmbeddingIndex;
use gazefuse_core::eval::{
    evaluate_fused, form_pairs, read_pairs, render_table, write_pairs, CvParams, EvalReport, Pair,
};
use gazefuse_core::fusion::{
    read_fused, read_scores, training_set, write_fused, write_scores, FusionMethod, ModelSpec,
};
use gazefuse_core::ingest::{parse_embeddings, IngestError, Manifest};
use gazefuse_core::offset::IdtParams;
use gazefuse_core::pipeline::{
    compute_offsets, evaluate_one, method_inputs, offset_lookup, read_offsets, run_pipeline,
    score_pairs, search_model, write_offsets, OffsetWindows, PipelineError, RunConfig, RunReport,
};
use gazefuse_core::preprocess::{summarize_recordings, write_summaries_to, WindowConfig};
use gazefuse_core::synth::{generate, SynthConfig};
use gazefuse_core::trees::EnsembleKind;
use gazefuse_core::{RecordingKey, Task};

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Parser)]
#[command(
    name = "gazefuse",
    version,
    about = "Gaze-offset and embedding score fusion"
)]
struct Cli {
    /// Worker threads; defaults to all cores. Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus: manifest, recording CSVs, embeddings CSV.
    Synth(SynthArgs),
    /// Per-window velocity summaries and validity flags.
    Preprocess(PreprocessArgs),
    /// Offset feature vector per target-bearing recording.
    Offset(OffsetArgs),
    /// Session-2 x session-1 pair list for one task.
    Pairs(PairsArgs),
    /// Embedding (and optionally offset) similarity for each pair.
    EmbedScore(EmbedScoreArgs),
    /// Cross-validated fusion of one (task, n_seq, method).
    Fuse(FuseArgs),
    /// Metrics of fused scores.
    Eval(EvalArgs),
    /// Fit a fusion classifier on all pairs and save it.
    TrainFusion(TrainArgs),
    /// All stages from a manifest to report.json and table.csv.
    Run(RunArgs),
    /// Render the table CSV of a report.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file with any SynthConfig fields; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    spread: Option<f64>,
    #[arg(long)]
    offset_noise: Option<f64>,
    #[arg(long)]
    embedding_noise: Option<f64>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    max_missing: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OffsetArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// IDT dispersion threshold, dva.
    #[arg(long, default_value_t = 1.0)]
    dispersion: f64,
    /// IDT minimum fixation duration, ms.
    #[arg(long = "min-dur", default_value_t = 100.0)]
    min_dur: f64,
    /// Restrict to the first N windows; repeat for several spans.
    #[arg(long = "nseq")]
    n_seq: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = parse_task)]
    task: Task,
    #[arg(long, default_value_t = 1)]
    round: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmbedScoreArgs {
    #[arg(long)]
    embeddings: PathBuf,
    /// Pair list; repeat to score several files.
    #[arg(long, required = true)]
    pairs: Vec<PathBuf>,
    #[arg(long = "nseq")]
    n_seq: usize,
    /// Offset features from `offset`; adds the spatial score.
    #[arg(long)]
    offsets: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = WindowsArg::Aligned)]
    offset_windows: WindowsArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowsArg {
    Aligned,
    Recording,
}

impl From<WindowsArg> for OffsetWindows {
    fn from(w: WindowsArg) -> Self {
        match w {
            WindowsArg::Aligned => OffsetWindows::Aligned,
            WindowsArg::Recording => OffsetWindows::Recording,
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Ensemble kind for a default randomized search.
    #[arg(long, value_parser = parse_kind)]
    tree_kind: Option<EnsembleKind>,
    /// JSON ModelSpec; overrides --tree-kind.
    #[arg(long)]
    model: Option<PathBuf>,
}

impl ModelArgs {
    fn spec(&self) -> Result<Option<ModelSpec>> {
        if let Some(path) = &self.model {
            let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
                path: path.clone(),
                source,
            })?;
            let spec = serde_json::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
            return Ok(Some(spec));
        }
        Ok(self.tree_kind.map(search_model))
    }
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: FusionMethod,
    #[arg(long = "nseq")]
    n_seq: usize,
    /// Defaults to the task of the first score row.
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    far: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the cross-validation report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    fused: PathBuf,
    /// Recorded in the report; folds come from the fused file.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    far: f64,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: FusionMethod,
    #[arg(long = "nseq")]
    n_seq: usize,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    save: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// JSON RunConfig; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long = "task", value_parser = parse_task)]
    tasks: Vec<Task>,
    #[arg(long = "nseq")]
    n_seq: Vec<usize>,
    #[arg(long = "method", value_parser = parse_method)]
    methods: Vec<FusionMethod>,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    dispersion: Option<f64>,
    #[arg(long = "min-dur")]
    min_dur: Option<f64>,
    #[arg(long, value_enum)]
    offset_windows: Option<WindowsArg>,
    #[arg(long)]
    far: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Recompute every stage even if cached outputs match.
    #[arg(long)]
    force: bool,
    /// Write the effective config here and continue.
    #[arg(long)]
    save_config: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// report.json from `run` or `eval`.
    #[arg(long)]
    report: PathBuf,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    s.parse()
        .map_err(|e: gazefuse_core::types::KeyError| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<FusionMethod, String> {
    s.parse::<FusionMethod>().map_err(|e| e.to_string())
}

fn parse_kind(s: &str) -> std::result::Result<EnsembleKind, String> {
    s.parse()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn manifest_keys(manifest: &Manifest) -> Result<Vec<RecordingKey>> {
    manifest
        .recordings
        .iter()
        .map(|e| {
            e.key()
                .map_err(|err| IngestError::Manifest(err.to_string()).into())
        })
        .collect()
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        }
        None => SynthConfig::default(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {
            $(if let Some(v) = args.$flag { config.$field = v; })*
        };
    }
    set!(subjects => n_subjects, seed => seed, duration => duration_s, rate => rate_hz,
         spread => offset_signature_spread, offset_noise => offset_noise,
         embedding_noise => embedding_noise, separation => embedding_class_separation);
    let corpus = generate(&config)?;
    corpus.write(&args.out_dir)?;
    write_text(&args.out_dir.join("synth.json"), &to_json(&config))?;
    eprintln!(
        "wrote {} recordings of {} subjects to {}",
        corpus.recordings.len(),
        config.n_subjects,
        args.out_dir.display()
    );
    Ok(())
}

fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let recordings = manifest.load_recordings()?;
    let config = WindowConfig {
        max_missing_fraction: args.max_missing,
        ..WindowConfig::default()
    };
    let rows = summarize_recordings(&recordings, &config);
    let mut buf = Vec::new();
    write_summaries_to(&mut buf, &rows).map_err(IngestError::from)?;
    write_text(&args.out, &String::from_utf8(buf).expect("csv is utf-8"))
}

fn offset(args: &OffsetArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let recordings = manifest.load_recordings()?;
    let params = IdtParams {
        dispersion_threshold: args.dispersion,
        min_duration_ms: args.min_dur,
    };
    let spans: Vec<Option<usize>> = if args.n_seq.is_empty() {
        vec![None]
    } else {
        args.n_seq.iter().map(|&n| Some(n)).collect()
    };
    if spans.contains(&Some(0)) {
        return Err(PipelineError::Config("--nseq must be positive".into()));
    }
    let rows = compute_offsets(&recordings, &params, &spans)?;
    write_offsets(&args.out, &rows)
}

fn pairs(args: &PairsArgs) -> Result<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let pairs = form_pairs(&manifest_keys(&manifest)?, args.task, args.round)?;
    write_pairs(&args.out, &pairs)?;
    Ok(())
}

fn embed_score(args: &EmbedScoreArgs) -> Result<()> {
    if args.n_seq == 0 {
        return Err(PipelineError::Config("--nseq must be positive".into()));
    }
    let index = EmbeddingIndex::new(parse_embeddings(&args.embeddings)?);
    let lookup = match &args.offsets {
        Some(p) => Some(offset_lookup(&read_offsets(p)?)),
        None => None,
    };
    let windows: OffsetWindows = args.offset_windows.into();
    let span = match windows {
        OffsetWindows::Aligned => Some(args.n_seq),
        OffsetWindows::Recording => None,
    };
    let mut all: Vec<Pair> = Vec::new();
    for p in &args.pairs {
        all.extend(read_pairs(p)?);
    }
    let scores = score_pairs(&all, args.n_seq, &index, lookup.as_ref(), span)?;
    write_scores(&args.out, &scores)?;
    Ok(())
}

fn task_or_first(
    task: Option<Task>,
    scores: &[gazefuse_core::fusion::ScoreVector],
) -> Result<Task> {
    task.or_else(|| scores.first().map(|v| v.task()))
        .ok_or_else(|| gazefuse_core::fusion::FusionError::NoPairs.into())
}

fn fuse(args: &FuseArgs) -> Result<()> {
    let scores = read_scores(&args.scores)?;
    let task = task_or_first(args.task, &scores)?;
    let model = args
        .model
        .spec()?
        .unwrap_or_else(gazefuse_core::pipeline::default_model);
    let params = CvParams {
        k: args.k,
        seed: args.seed,
        far_target: args.far,
        ..CvParams::default()
    };
    let (report, fused) = evaluate_one(&scores, task, args.n_seq, args.method, &model, &params)?;
    write_fused(&args.out, &fused)?;
    if let Some(path) = &args.report {
        write_text(path, &to_json(&report))?;
    }
    eprintln!(
        "{task} n_seq={} {}: mean EER {:.2}%",
        args.n_seq, args.method, report.eer_percent
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let fused = read_fused(&args.fused)?;
    let reports = evaluate_fused(&fused, args.seed, args.far)?;
    for r in &reports {
        if r.k != args.k {
            eprintln!(
                "warning: {} n_seq={} {} has {} folds, expected {}",
                r.task, r.n_seq, r.method, r.k, args.k
            );
        }
    }
    write_text(&args.report, &to_json(&reports))?;
    if let Some(path) = &args.table {
        write_text(path, &render_table(&reports))?;
    }
    Ok(())
}

fn train_fusion(args: &TrainArgs) -> Result<()> {
    if !args.method.is_learned() {
        return Err(PipelineError::Config(format!(
            "method {} does not train a classifier",
            args.method
        )));
    }
    let scores = read_scores(&args.scores)?;
    let task = task_or_first(args.task, &scores)?;
    let inputs = method_inputs(&scores, task, args.n_seq, args.method)?;
    let data = training_set(&inputs, args.method)?;
    let spec = args
        .model
        .spec()?
        .unwrap_or_else(gazefuse_core::pipeline::default_model);
    let (model, _) = spec
        .fit(&data, args.seed)
        .map_err(gazefuse_core::fusion::FusionError::from)?;
    write_text(&args.save, &to_json(&model))
}

fn run(args: &RunArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &args.manifest {
        config.manifest = v.clone();
    }
    if let Some(v) = &args.out_dir {
        config.output_dir = v.clone();
    }
    if !args.tasks.is_empty() {
        config.tasks = args.tasks.clone();
    }
    if !args.n_seq.is_empty() {
        config.n_seq = args.n_seq.clone();
    }
    if !args.methods.is_empty() {
        config.methods = args.methods.clone();
    }
    if let Some(spec) = args.model.spec()? {
        config.model = spec;
    }
    if let Some(v) = args.dispersion {
        config.idt.dispersion_threshold = v;
    }
    if let Some(v) = args.min_dur {
        config.idt.min_duration_ms = v;
    }
    if let Some(v) = args.offset_windows {
        config.offset_windows = v.into();
    }
    if let Some(v) = args.far {
        config.far_target = v;
    }
    if let Some(v) = args.k {
        config.k = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    config.validate()?;
    if let Some(path) = &args.save_config {
        config.save(path)?;
    }
    let out = run_pipeline(&config, args.force)?;
    for stage in &out.stages.cached {
        eprintln!("{stage}: cached");
    }
    for stage in &out.stages.computed {
        eprintln!("{stage}: computed");
    }
    print!("{}", out.table);
    Ok(())
}

fn report(args: &ReportArgs) -> Result<()> {
    let bytes = std::fs::read(&args.report).map_err(io_err(&args.report))?;
    let reports: Vec<EvalReport> = match serde_json::from_slice::<RunReport>(&bytes) {
        Ok(r) => r.reports,
        Err(_) => serde_json::from_slice(&bytes)
            .map_err(|e| PipelineError::Json(args.report.clone(), e.to_string()))?,
    };
    let table = render_table(&reports);
    match &args.out {
        Some(path) => write_text(path, &table),
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Offset(a) => offset(a),
        Command::Pairs(a) => pairs(a),
        Command::EmbedScore(a) => embed_score(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::TrainFusion(a) => train_fusion(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
