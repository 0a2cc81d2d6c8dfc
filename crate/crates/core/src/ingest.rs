//! Readers and writers for recording CSVs, embedding CSVs and run manifests.
//!
//! Recording files use the GazeBase column names `n,x,y,xT,yT` (time in ms,
//! gaze and target in dva). Unknown columns are ignored by name; an empty
//! cell or a literal `NaN` is a missing value. Target columns may be absent
//! altogether (reading task).
//!
//! Embedding files hold one window x fold per line:
//! `subject,round,session,task,window,fold,e0..e127`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    GazeRecording, GazeSample, KeyError, RecordingError, RecordingKey, Task, WindowKey,
};

/// Dimension of one per-fold embedding.
pub const EMBEDDING_DIM: usize = 128;
/// Number of embedding folds concatenated per window.
pub const N_FOLDS: u8 = 4;

const RECORDING_HEADER: [&str; 5] = ["n", "x", "y", "xT", "yT"];
const EMBEDDING_KEY_COLUMNS: [&str; 6] = ["subject", "round", "session", "task", "window", "fold"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: expected {expected} columns, found {found}")]
    MalformedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: cannot parse `{value}` in column `{column}`")]
    BadValue {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: time {t_ms} ms does not increase")]
    NonMonotonicTime { line: u64, t_ms: f64 },
    #[error("recording file has no data rows")]
    EmptyRecording,
    #[error("invalid recording: {0}")]
    Recording(#[from] RecordingError),
    #[error("line {line}: expected {EMBEDDING_DIM} embedding values, found {found}")]
    DimensionMismatch { line: u64, found: usize },
    #[error("line {line}: duplicate embedding for {window} fold {fold}")]
    DuplicateKey {
        line: u64,
        window: WindowKey,
        fold: u8,
    },
    #[error("line {line}: {source}")]
    Key {
        line: u64,
        #[source]
        source: KeyError,
    },
    #[error("line {line}: fold {fold} out of range 0..{N_FOLDS}")]
    InvalidFold { line: u64, fold: i64 },
    #[error("line {line}: embedding value is not finite")]
    NonFinite { line: u64 },
    #[error("manifest: {0}")]
    Manifest(String),
}

impl IngestError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IngestError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Whether the error comes from the filesystem rather than file content.
    pub fn is_io(&self) -> bool {
        match self {
            IngestError::Io { .. } => true,
            IngestError::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Per-window, per-fold embedding produced by an external model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub window: WindowKey,
    pub fold_id: u8,
    pub vector: Vec<f32>,
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| IngestError::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| IngestError::io(parent, e))?;
        }
    }
    File::create(path).map_err(|e| IngestError::io(path, e))
}

fn parse_cell(cell: &str, line: u64, column: &str) -> Result<f64> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    cell.parse::<f64>().map_err(|_| IngestError::BadValue {
        line,
        column: column.to_string(),
        value: cell.to_string(),
    })
}

fn format_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

pub fn parse_recording(path: &Path, key: RecordingKey, rate_hz: f64) -> Result<GazeRecording> {
    parse_recording_from(open(path)?, key, rate_hz)
}

pub fn parse_recording_from<R: Read>(
    reader: R,
    key: RecordingKey,
    rate_hz: f64,
) -> Result<GazeRecording> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| column(name).ok_or_else(|| IngestError::MissingColumn(name.into()));
    let (ci_n, ci_x, ci_y) = (required("n")?, required("x")?, required("y")?);
    let (ci_tx, ci_ty) = (column("xT"), column("yT"));

    let mut samples = Vec::new();
    let mut last_t = f64::NEG_INFINITY;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(IngestError::MalformedRow {
                line,
                expected: headers.len(),
                found: record.len(),
            });
        }
        let t_ms = parse_cell(&record[ci_n], line, "n")?;
        if !t_ms.is_finite() {
            return Err(IngestError::BadValue {
                line,
                column: "n".into(),
                value: record[ci_n].to_string(),
            });
        }
        if t_ms <= last_t || t_ms < 0.0 {
            return Err(IngestError::NonMonotonicTime { line, t_ms });
        }
        last_t = t_ms;
        let target = |ci: Option<usize>, name: &str| match ci {
            Some(i) => parse_cell(&record[i], line, name),
            None => Ok(f64::NAN),
        };
        samples.push(GazeSample {
            t_ms,
            gx: parse_cell(&record[ci_x], line, "x")?,
            gy: parse_cell(&record[ci_y], line, "y")?,
            tx: target(ci_tx, "xT")?,
            ty: target(ci_ty, "yT")?,
        });
    }
    if samples.is_empty() {
        return Err(IngestError::EmptyRecording);
    }
    Ok(GazeRecording::new(key, rate_hz, samples)?)
}

pub fn write_recording(path: &Path, recording: &GazeRecording) -> Result<()> {
    write_recording_to(create(path)?, recording)
}

pub fn write_recording_to<W: Write>(writer: W, recording: &GazeRecording) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RECORDING_HEADER)?;
    for s in recording.samples() {
        w.write_record([
            format_cell(s.t_ms),
            format_cell(s.gx),
            format_cell(s.gy),
            format_cell(s.tx),
            format_cell(s.ty),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn parse_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    parse_embeddings_from(open(path)?)
}

pub fn parse_embeddings_from<R: Read>(reader: R) -> Result<Vec<EmbeddingRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for (i, name) in EMBEDDING_KEY_COLUMNS.iter().enumerate() {
        if headers.get(i) != Some(name) {
            return Err(IngestError::MissingColumn((*name).into()));
        }
    }
    let n_key = EMBEDDING_KEY_COLUMNS.len();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < n_key {
            return Err(IngestError::MalformedRow {
                line,
                expected: n_key + EMBEDDING_DIM,
                found: record.len(),
            });
        }
        let found = record.len() - n_key;
        if found != EMBEDDING_DIM {
            return Err(IngestError::DimensionMismatch { line, found });
        }
        let int = |i: usize| -> Result<i64> {
            record[i].parse::<i64>().map_err(|_| IngestError::BadValue {
                line,
                column: EMBEDDING_KEY_COLUMNS[i].into(),
                value: record[i].to_string(),
            })
        };
        let task: Task = record[3]
            .parse()
            .map_err(|source| IngestError::Key { line, source })?;
        let (round, session, window, fold) = (int(1)?, int(2)?, int(4)?, int(5)?);
        if !(0..N_FOLDS as i64).contains(&fold) {
            return Err(IngestError::InvalidFold { line, fold });
        }
        if window < 0 || window > u32::MAX as i64 {
            return Err(IngestError::BadValue {
                line,
                column: "window".into(),
                value: record[4].to_string(),
            });
        }
        let recording = RecordingKey::from_parts(&record[0], round, session, task)
            .map_err(|source| IngestError::Key { line, source })?;
        let key = WindowKey {
            recording,
            window_index: window as u32,
        };
        let fold = fold as u8;
        let mut vector = Vec::with_capacity(EMBEDDING_DIM);
        for (j, cell) in record.iter().skip(n_key).enumerate() {
            let v: f32 = cell.parse().map_err(|_| IngestError::BadValue {
                line,
                column: format!("e{j}"),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(IngestError::NonFinite { line });
            }
            vector.push(v);
        }
        if !seen.insert((key.clone(), fold)) {
            return Err(IngestError::DuplicateKey {
                line,
                window: key,
                fold,
            });
        }
        out.push(EmbeddingRecord {
            window: key,
            fold_id: fold,
            vector,
        });
    }
    Ok(out)
}

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    write_embeddings_to(create(path)?, records)
}

/// Values are written with 9 significant digits, which round-trips `f32`.
pub fn write_embeddings_to<W: Write>(writer: W, records: &[EmbeddingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = EMBEDDING_KEY_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..EMBEDDING_DIM).map(|i| format!("e{i}")));
    w.write_record(&header)?;
    for r in records {
        let k = &r.window.recording;
        let mut row = vec![
            k.subject_id.clone(),
            k.round.to_string(),
            k.session.to_string(),
            k.task.to_string(),
            r.window.window_index.to_string(),
            r.fold_id.to_string(),
        ];
        row.extend(r.vector.iter().map(|v| format!("{v:.8e}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One recording entry of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub subject: String,
    pub round: u32,
    pub session: u8,
    pub task: Task,
    pub path: PathBuf,
    pub rate_hz: f64,
}

impl ManifestEntry {
    pub fn key(&self) -> std::result::Result<RecordingKey, KeyError> {
        RecordingKey::new(&self.subject, self.round, self.session, self.task)
    }
}

/// Batch-run inputs: recording files with their keys and rates, plus an
/// optional embeddings file. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "manifest_version")]
    pub version: u32,
    pub recordings: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(skip)]
    base_dir: PathBuf,
}

fn manifest_version() -> u32 {
    1
}

impl Manifest {
    pub fn new(recordings: Vec<ManifestEntry>, embeddings: Option<PathBuf>) -> Self {
        Self {
            version: manifest_version(),
            recordings,
            embeddings,
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        let mut manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| IngestError::Manifest(e.to_string()))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut keys = BTreeSet::new();
        for entry in &manifest.recordings {
            let key = entry
                .key()
                .map_err(|e| IngestError::Manifest(e.to_string()))?;
            if !keys.insert(key.clone()) {
                return Err(IngestError::Manifest(format!("duplicate recording {key}")));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string_pretty(self).map_err(|e| IngestError::Manifest(e.to_string()))?;
        let mut f = create(path)?;
        f.write_all(text.as_bytes())
            .and_then(|_| f.write_all(b"\n"))
            .map_err(|e| IngestError::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn embeddings_path(&self) -> Option<PathBuf> {
        self.embeddings.as_deref().map(|p| self.resolve(p))
    }

    /// Reads every recording, in parallel, returned in manifest order.
    pub fn load_recordings(&self) -> Result<Vec<GazeRecording>> {
        use rayon::prelude::*;
        self.recordings
            .par_iter()
            .map(|e| {
                let key = e
                    .key()
                    .map_err(|err| IngestError::Manifest(err.to_string()))?;
                parse_recording(&self.resolve(&e.path), key, e.rate_hz)
            })
            .collect()
    }
}
