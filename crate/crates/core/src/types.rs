//! Domain vocabulary shared by every stage of the pipeline.
//!
//! Gaze and target coordinates are degrees of visual angle (dva), time is
//! milliseconds from the start of a recording. A missing coordinate is stored
//! as `f64::NAN`, never as zero.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length of one scoring subsequence in seconds.
pub const WINDOW_SECONDS: f64 = 5.0;

/// Relative tolerance on inter-sample spacing.
const SPACING_TOLERANCE: f64 = 0.10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeyError {
    #[error("unknown task `{0}` (expected RAN or TEX)")]
    UnknownTask(String),
    #[error("session must be 1 or 2, got {0}")]
    InvalidSession(i64),
    #[error("round must be >= 1, got {0}")]
    InvalidRound(i64),
    #[error("subject id must not be empty")]
    EmptySubject,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordingError {
    #[error("sampling rate must be positive and finite, got {0}")]
    InvalidRate(f64),
    #[error("recording has no samples")]
    Empty,
    #[error("sample {index}: time {t_ms} ms is negative or not after the previous sample")]
    NonMonotonicTime { index: usize, t_ms: f64 },
    #[error(
        "sample {index}: spacing {spacing_ms} ms deviates more than 10% from {expected_ms} ms"
    )]
    NonUniformSpacing {
        index: usize,
        spacing_ms: f64,
        expected_ms: f64,
    },
    #[error("recording has no non-missing gaze sample")]
    NoGaze,
}

/// Eye-movement task. Only random saccades carry stimulus targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "RAN")]
    Ran,
    #[serde(rename = "TEX")]
    Tex,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Ran, Task::Tex];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Ran => "RAN",
            Task::Tex => "TEX",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = KeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RAN" => Ok(Task::Ran),
            "TEX" => Ok(Task::Tex),
            _ => Err(KeyError::UnknownTask(s.to_string())),
        }
    }
}

/// Recording session within a round. Session 2 enrolls, session 1 authenticates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Session {
    One,
    Two,
}

impl Session {
    pub fn number(self) -> u8 {
        match self {
            Session::One => 1,
            Session::Two => 2,
        }
    }
}

impl TryFrom<u8> for Session {
    type Error = KeyError;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            1 => Ok(Session::One),
            2 => Ok(Session::Two),
            other => Err(KeyError::InvalidSession(other as i64)),
        }
    }
}

impl From<Session> for u8 {
    fn from(s: Session) -> u8 {
        s.number()
    }
}

impl fmt::Display for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Identifies one recording: (subject, round, session, task).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordingKey {
    pub subject_id: String,
    pub round: u32,
    pub session: Session,
    pub task: Task,
}

impl RecordingKey {
    pub fn new(
        subject_id: impl Into<String>,
        round: u32,
        session: u8,
        task: Task,
    ) -> Result<Self, KeyError> {
        let subject_id = subject_id.into();
        if subject_id.trim().is_empty() {
            return Err(KeyError::EmptySubject);
        }
        if round == 0 {
            return Err(KeyError::InvalidRound(0));
        }
        Ok(Self {
            subject_id,
            round,
            session: Session::try_from(session)?,
            task,
        })
    }

    /// Like `new`, from wide integers as they appear in text files.
    pub fn from_parts(
        subject_id: &str,
        round: i64,
        session: i64,
        task: Task,
    ) -> Result<Self, KeyError> {
        let round = u32::try_from(round).map_err(|_| KeyError::InvalidRound(round))?;
        let session = u8::try_from(session).map_err(|_| KeyError::InvalidSession(session))?;
        Self::new(subject_id, round, session, task)
    }

    /// Same subject, round and session, different task.
    pub fn with_task(&self, task: Task) -> Self {
        Self {
            task,
            ..self.clone()
        }
    }
}

impl fmt::Display for RecordingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/r{}/s{}/{}",
            self.subject_id, self.round, self.session, self.task
        )
    }
}

/// A fixed 5 s subsequence of a recording.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindowKey {
    pub recording: RecordingKey,
    pub window_index: u32,
}

impl fmt::Display for WindowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.recording, self.window_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairLabel {
    Genuine,
    Impostor,
}

impl PairLabel {
    pub fn between(enroll_subject: &str, auth_subject: &str) -> Self {
        if enroll_subject == auth_subject {
            PairLabel::Genuine
        } else {
            PairLabel::Impostor
        }
    }

    pub fn is_genuine(self) -> bool {
        self == PairLabel::Genuine
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairLabel::Genuine => "genuine",
            PairLabel::Impostor => "impostor",
        }
    }
}

impl FromStr for PairLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "genuine" | "1" => Ok(PairLabel::Genuine),
            "impostor" | "0" => Ok(PairLabel::Impostor),
            other => Err(format!("unknown pair label `{other}`")),
        }
    }
}

/// Unordered pair of subject ids; the grouping tag of a comparison.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubjectPair(String, String);

impl SubjectPair {
    pub fn new(a: &str, b: &str) -> Self {
        if a <= b {
            SubjectPair(a.to_string(), b.to_string())
        } else {
            SubjectPair(b.to_string(), a.to_string())
        }
    }

    pub fn first(&self) -> &str {
        &self.0
    }

    pub fn second(&self) -> &str {
        &self.1
    }

    pub fn contains(&self, subject: &str) -> bool {
        self.0 == subject || self.1 == subject
    }
}

impl fmt::Display for SubjectPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.0, self.1)
    }
}

/// One row of a recording. `NaN` marks a missing coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t_ms: f64,
    pub gx: f64,
    pub gy: f64,
    pub tx: f64,
    pub ty: f64,
}

impl GazeSample {
    pub fn new(t_ms: f64, gx: f64, gy: f64, tx: f64, ty: f64) -> Self {
        Self {
            t_ms,
            gx,
            gy,
            tx,
            ty,
        }
    }

    /// Sample with gaze only (e.g. reading task).
    pub fn gaze_only(t_ms: f64, gx: f64, gy: f64) -> Self {
        Self::new(t_ms, gx, gy, f64::NAN, f64::NAN)
    }

    pub fn has_gaze(&self) -> bool {
        self.gx.is_finite() && self.gy.is_finite()
    }

    pub fn has_target(&self) -> bool {
        self.tx.is_finite() && self.ty.is_finite()
    }
}

/// A validated recording: strictly increasing time, near-uniform spacing and
/// at least one gaze sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeRecording {
    key: RecordingKey,
    rate_hz: f64,
    samples: Vec<GazeSample>,
}

impl GazeRecording {
    pub fn new(
        key: RecordingKey,
        rate_hz: f64,
        samples: Vec<GazeSample>,
    ) -> Result<Self, RecordingError> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(RecordingError::InvalidRate(rate_hz));
        }
        if samples.is_empty() {
            return Err(RecordingError::Empty);
        }
        let expected_ms = 1000.0 / rate_hz;
        for (index, s) in samples.iter().enumerate() {
            let increasing = index == 0 || s.t_ms > samples[index - 1].t_ms;
            if !(s.t_ms.is_finite() && s.t_ms >= 0.0 && increasing) {
                return Err(RecordingError::NonMonotonicTime {
                    index,
                    t_ms: s.t_ms,
                });
            }
        }
        for (index, pair) in samples.windows(2).enumerate() {
            let spacing_ms = pair[1].t_ms - pair[0].t_ms;
            if (spacing_ms - expected_ms).abs() > SPACING_TOLERANCE * expected_ms {
                return Err(RecordingError::NonUniformSpacing {
                    index: index + 1,
                    spacing_ms,
                    expected_ms,
                });
            }
        }
        if !samples.iter().any(GazeSample::has_gaze) {
            return Err(RecordingError::NoGaze);
        }
        Ok(Self {
            key,
            rate_hz,
            samples,
        })
    }

    pub fn key(&self) -> &RecordingKey {
        &self.key
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn samples(&self) -> &[GazeSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration covered by the samples, `len / rate_hz` seconds.
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }

    pub fn samples_per_window(&self) -> usize {
        samples_per_window(self.rate_hz)
    }

    /// Number of complete 5 s windows; a trailing partial window is dropped.
    pub fn window_count(&self) -> usize {
        self.samples.len() / self.samples_per_window()
    }

    /// Sample index range of window `index`. Panics past `window_count()`.
    pub fn window_range(&self, index: usize) -> Range<usize> {
        assert!(index < self.window_count(), "window {index} out of range");
        let n = self.samples_per_window();
        index * n..(index + 1) * n
    }

    pub fn window_key(&self, index: usize) -> WindowKey {
        WindowKey {
            recording: self.key.clone(),
            window_index: index as u32,
        }
    }

    pub fn has_targets(&self) -> bool {
        self.samples.iter().any(GazeSample::has_target)
    }
}

pub fn samples_per_window(rate_hz: f64) -> usize {
    (WINDOW_SECONDS * rate_hz).round() as usize
}

/// Floor of `duration / 5 s` for a recording.
pub fn window_count(recording: &GazeRecording) -> usize {
    recording.window_count()
}
