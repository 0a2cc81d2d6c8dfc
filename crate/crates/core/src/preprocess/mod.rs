//! Positional gaze to normalized velocity subsequences.
//!
//! Positions are differentiated over the whole recording, clamped to a
//! plausible velocity range, then sliced into non-overlapping 5 s windows.
//! Z-score statistics may only be fitted on windows tagged [`DataSplit::Train`].

mod savgol;

pub use savgol::{sg_differentiate, SavitzkyGolay, SG_ORDER, SG_WINDOW};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{GazeRecording, WindowKey};

/// Velocities beyond this magnitude (deg/s) are clamped.
pub const VELOCITY_CLAMP_DEG_S: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("sequence of {len} samples is shorter than the {needed}-sample filter")]
    TooShort { len: usize, needed: usize },
    #[error("zero variance in {channel} channel")]
    DegenerateStats { channel: &'static str },
    #[error("need at least 2 non-missing values per channel, {channel} has {count}")]
    InsufficientData { channel: &'static str, count: usize },
    #[error("window {0} is not tagged as training data")]
    Leakage(WindowKey),
    #[error("no training windows")]
    NoWindows,
}

/// Provenance of a window. Only `Train` windows may feed normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum DataSplit {
    Train,
    Validation,
    #[default]
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Windows whose missing-velocity fraction exceeds this are flagged invalid.
    pub max_missing_fraction: f64,
    pub velocity_clamp: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            max_missing_fraction: 0.5,
            velocity_clamp: VELOCITY_CLAMP_DEG_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityWindow {
    pub window: WindowKey,
    pub split: DataSplit,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub missing_fraction: f64,
    pub valid: bool,
}

impl VelocityWindow {
    pub fn len(&self) -> usize {
        self.vx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vx.is_empty()
    }

    pub fn tagged(mut self, split: DataSplit) -> Self {
        self.split = split;
        self
    }

    /// Channels with missing entries replaced by zero, as fed to the model.
    pub fn zero_filled(&self) -> (Vec<f64>, Vec<f64>) {
        let fill = |v: &[f64]| {
            v.iter()
                .map(|x| if x.is_nan() { 0.0 } else { *x })
                .collect()
        };
        (fill(&self.vx), fill(&self.vy))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean_x: f64,
    pub mean_y: f64,
    pub std_x: f64,
    pub std_y: f64,
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean_x: 0.0,
            mean_y: 0.0,
            std_x: 1.0,
            std_y: 1.0,
        }
    }
}

fn clamp_velocity(v: f64, limit: f64) -> f64 {
    if v.is_nan() {
        v
    } else {
        v.clamp(-limit, limit)
    }
}

/// Differentiate, clamp and slice a recording into its complete windows.
pub fn make_windows(recording: &GazeRecording, config: &WindowConfig) -> Vec<VelocityWindow> {
    let n_windows = recording.window_count();
    if n_windows == 0 {
        return Vec::new();
    }
    let rate = recording.rate_hz();
    let xs: Vec<f64> = recording.samples().iter().map(|s| s.gx).collect();
    let ys: Vec<f64> = recording.samples().iter().map(|s| s.gy).collect();
    let differentiate = |p: &[f64]| -> Vec<f64> {
        match sg_differentiate(p, rate) {
            Ok(v) => v
                .into_iter()
                .map(|x| clamp_velocity(x, config.velocity_clamp))
                .collect(),
            Err(_) => vec![f64::NAN; p.len()],
        }
    };
    let vx = differentiate(&xs);
    let vy = differentiate(&ys);
    (0..n_windows)
        .map(|w| {
            let range = recording.window_range(w);
            let wx = vx[range.clone()].to_vec();
            let wy = vy[range].to_vec();
            let missing = wx
                .iter()
                .zip(&wy)
                .filter(|(a, b)| a.is_nan() || b.is_nan())
                .count();
            let missing_fraction = missing as f64 / wx.len() as f64;
            VelocityWindow {
                window: recording.window_key(w),
                split: DataSplit::default(),
                vx: wx,
                vy: wy,
                missing_fraction,
                valid: missing_fraction <= config.max_missing_fraction,
            }
        })
        .collect()
}

/// Channel-wise mean and population std over non-missing training values.
pub fn fit_norm(windows: &[VelocityWindow]) -> Result<NormStats, PreprocessError> {
    if windows.is_empty() {
        return Err(PreprocessError::NoWindows);
    }
    if let Some(w) = windows.iter().find(|w| w.split != DataSplit::Train) {
        return Err(PreprocessError::Leakage(w.window.clone()));
    }
    let channel = |name: &'static str, get: fn(&VelocityWindow) -> &[f64]| {
        let values: Vec<f64> = windows
            .iter()
            .flat_map(|w| get(w).iter().copied())
            .filter(|v| !v.is_nan())
            .collect();
        if values.len() < 2 {
            return Err(PreprocessError::InsufficientData {
                channel: name,
                count: values.len(),
            });
        }
        let mean = crate::stats::mean(&values);
        let std = crate::stats::std_population(&values);
        if std.is_nan() || std <= 0.0 {
            return Err(PreprocessError::DegenerateStats { channel: name });
        }
        Ok((mean, std))
    };
    let (mean_x, std_x) = channel("x", |w| &w.vx)?;
    let (mean_y, std_y) = channel("y", |w| &w.vy)?;
    Ok(NormStats {
        mean_x,
        mean_y,
        std_x,
        std_y,
    })
}

pub fn apply_norm(window: &VelocityWindow, stats: &NormStats) -> VelocityWindow {
    let z = |v: &[f64], m: f64, s: f64| v.iter().map(|x| (x - m) / s).collect();
    VelocityWindow {
        vx: z(&window.vx, stats.mean_x, stats.std_x),
        vy: z(&window.vy, stats.mean_y, stats.std_y),
        ..window.clone()
    }
}

/// Per-window velocity summary written by the `preprocess` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub subject: String,
    pub round: u32,
    pub session: u8,
    pub task: String,
    pub window: u32,
    pub n_samples: usize,
    pub valid: bool,
    pub missing_fraction: f64,
    pub mean_speed: f64,
    pub max_speed: f64,
    pub mean_vx: f64,
    pub std_vx: f64,
    pub mean_vy: f64,
    pub std_vy: f64,
}

pub fn summarize(window: &VelocityWindow) -> WindowSummary {
    let present = |v: &[f64]| -> Vec<f64> { v.iter().copied().filter(|x| !x.is_nan()).collect() };
    let moments = |v: Vec<f64>| {
        if v.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (crate::stats::mean(&v), crate::stats::std_population(&v))
        }
    };
    let speeds: Vec<f64> = window
        .vx
        .iter()
        .zip(&window.vy)
        .filter(|(a, b)| !a.is_nan() && !b.is_nan())
        .map(|(a, b)| a.hypot(*b))
        .collect();
    let (mean_vx, std_vx) = moments(present(&window.vx));
    let (mean_vy, std_vy) = moments(present(&window.vy));
    let key = &window.window.recording;
    WindowSummary {
        subject: key.subject_id.clone(),
        round: key.round,
        session: key.session.number(),
        task: key.task.to_string(),
        window: window.window.window_index,
        n_samples: window.len(),
        valid: window.valid,
        missing_fraction: window.missing_fraction,
        mean_speed: if speeds.is_empty() {
            f64::NAN
        } else {
            crate::stats::mean(&speeds)
        },
        max_speed: speeds.iter().copied().fold(f64::NAN, f64::max),
        mean_vx,
        std_vx,
        mean_vy,
        std_vy,
    }
}

/// Summaries of every window of every recording, in input order.
pub fn summarize_recordings(
    recordings: &[GazeRecording],
    config: &WindowConfig,
) -> Vec<WindowSummary> {
    recordings
        .iter()
        .flat_map(|r| make_windows(r, config))
        .map(|w| summarize(&w))
        .collect()
}

/// CSV with a header row named after the [`WindowSummary`] fields.
pub fn write_summaries_to<W: std::io::Write>(
    writer: W,
    rows: &[WindowSummary],
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{GazeSample, RecordingKey, Task};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn summaries_write_one_row_per_window() {
        let rec = crate::synth::generate(&crate::synth::SynthConfig {
            n_subjects: 2,
            duration_s: 12.0,
            ..Default::default()
        })
        .unwrap()
        .recordings;
        let rows = summarize_recordings(&rec[..2], &WindowConfig::default());
        assert_eq!(rows.len(), 4);
        let mut buf = Vec::new();
        write_summaries_to(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("subject,round,session,task,window,n_samples,valid,"));
        assert_eq!(text.lines().count(), 5);
    }

    fn recording(n: usize, rate: f64, f: impl Fn(f64) -> (f64, f64)) -> GazeRecording {
        let key = RecordingKey::new("S1", 1, 1, Task::Tex).unwrap();
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                let (x, y) = f(t);
                GazeSample::gaze_only(t * 1000.0, x, y)
            })
            .collect();
        GazeRecording::new(key, rate, samples).unwrap()
    }

    fn train_window(vx: Vec<f64>, vy: Vec<f64>) -> VelocityWindow {
        VelocityWindow {
            window: WindowKey {
                recording: RecordingKey::new("S1", 1, 1, Task::Ran).unwrap(),
                window_index: 0,
            },
            split: DataSplit::Train,
            vx,
            vy,
            missing_fraction: 0.0,
            valid: true,
        }
    }

    #[test]
    fn twelve_seconds_gives_two_windows() {
        let rec = recording(12_000, 1000.0, |t| (t, -t));
        let w = make_windows(&rec, &WindowConfig::default());
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|w| w.len() == 5000 && w.valid));
        assert_eq!(w[1].window.window_index, 1);
    }

    #[test]
    fn mostly_missing_window_is_flagged() {
        // A recording needs one gaze sample to be valid at all.
        let rec = recording(5000, 1000.0, |t| {
            if t == 0.0 {
                (0.0, 0.0)
            } else {
                (f64::NAN, f64::NAN)
            }
        });
        let w = make_windows(&rec, &WindowConfig::default());
        assert_eq!(w.len(), 1);
        assert!(!w[0].valid);
        assert_eq!(w[0].missing_fraction, 1.0);
    }

    #[test]
    fn windows_match_whole_signal_derivative_on_interior() {
        let rate = 250.0;
        let rec = recording(10_000, rate, |t| (3.0 * t + 0.1 * (t * 2.0).sin(), 0.5 * t));
        let windows = make_windows(&rec, &WindowConfig::default());
        assert_eq!(windows.len(), 8);
        let xs: Vec<f64> = rec.samples().iter().map(|s| s.gx).collect();
        let full = sg_differentiate(&xs, rate).unwrap();
        let concat: Vec<f64> = windows.iter().flat_map(|w| w.vx.iter().copied()).collect();
        assert_eq!(concat.len(), full.len());
        for (a, b) in concat.iter().zip(&full) {
            assert_eq!(a, b);
        }
        // Slicing before differentiating agrees away from the slice edges.
        let per_slice = sg_differentiate(&xs[1250..2500], rate).unwrap();
        for i in 3..per_slice.len() - 3 {
            assert!((per_slice[i] - full[1250 + i]).abs() < 1e-9);
        }
    }

    #[test]
    fn velocities_are_clamped() {
        let rec = recording(
            5000,
            1000.0,
            |t| if t < 2.5 { (0.0, 0.0) } else { (50.0, 0.0) },
        );
        let w = make_windows(&rec, &WindowConfig::default());
        let peak = w[0].vx.iter().copied().fold(f64::MIN, f64::max);
        assert_eq!(peak, VELOCITY_CLAMP_DEG_S);
    }

    #[test]
    fn fit_norm_population_convention() {
        let s = fit_norm(&[train_window(vec![0.0, 2.0], vec![0.0, 2.0])]).unwrap();
        assert_eq!((s.mean_x, s.std_x, s.mean_y, s.std_y), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn fit_norm_errors() {
        assert_eq!(
            fit_norm(&[train_window(vec![3.0; 4], vec![0.0, 1.0, 2.0, 3.0])]),
            Err(PreprocessError::DegenerateStats { channel: "x" })
        );
        assert!(matches!(
            fit_norm(&[train_window(vec![1.0, f64::NAN], vec![0.0, 1.0])]),
            Err(PreprocessError::InsufficientData {
                channel: "x",
                count: 1
            })
        ));
        let held_out = train_window(vec![0.0, 1.0], vec![0.0, 1.0]).tagged(DataSplit::Test);
        assert!(matches!(
            fit_norm(&[train_window(vec![0.0, 1.0], vec![0.0, 1.0]), held_out]),
            Err(PreprocessError::Leakage(_))
        ));
    }

    #[test]
    fn fit_norm_recovers_gaussian_parameters() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let gx = Normal::new(12.0, 3.0).unwrap();
        let gy = Normal::new(-4.0, 0.5).unwrap();
        let vx: Vec<f64> = (0..1000).map(|_| gx.sample(&mut rng)).collect();
        let vy: Vec<f64> = (0..1000).map(|_| gy.sample(&mut rng)).collect();
        let s = fit_norm(&[train_window(vx, vy)]).unwrap();
        assert!((s.mean_x - 12.0).abs() / 12.0 < 0.05);
        assert!((s.std_x - 3.0).abs() / 3.0 < 0.05);
        assert!((s.mean_y + 4.0).abs() / 4.0 < 0.05);
        assert!((s.std_y - 0.5).abs() / 0.5 < 0.05, "{s:?}");
    }

    #[test]
    fn apply_norm_behaviour() {
        let w = train_window(vec![1.0, 5.0, f64::NAN], vec![2.0, 2.0, 2.0]);
        let at_mean = apply_norm(
            &train_window(vec![3.0; 3], vec![2.0; 3]),
            &NormStats {
                mean_x: 3.0,
                mean_y: 2.0,
                std_x: 2.0,
                std_y: 7.0,
            },
        );
        assert!(at_mean.vx.iter().chain(&at_mean.vy).all(|&v| v == 0.0));
        let same = apply_norm(&w, &NormStats::identity());
        assert_eq!(same.vx[..2], w.vx[..2]);
        assert!(same.vx[2].is_nan());
        let stats = NormStats {
            mean_x: 0.3,
            mean_y: -1.7,
            std_x: 2.9,
            std_y: 0.11,
        };
        let z = apply_norm(&w, &stats);
        for (orig, zi) in w.vx.iter().zip(&z.vx).take(2) {
            assert!((zi * stats.std_x + stats.mean_x - orig).abs() < 1e-12);
        }
        let (fx, _) = z.zero_filled();
        assert_eq!(fx[2], 0.0);
    }
}
