//! Continuous gaze offset: per-sample angular distance between gaze and
//! stimulus target, summarized over fixations into a per-recording feature
//! vector and compared with `s = 1 / (1 + d)`.

mod idt;

pub use idt::{idt_fixations, Fixation, IdtParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats;
use crate::types::{GazeRecording, GazeSample, RecordingKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OffsetError {
    #[error("angle ({x}, {y}) dva is outside the open hemisphere |angle| < 90")]
    OutOfRange { x: f64, y: f64 },
    #[error("no fixation-covered offset samples")]
    NoFixationData,
    #[error("recording {0} has no target positions")]
    MissingTargets(RecordingKey),
}

/// Unit viewing ray for a screen position given in degrees of visual angle.
pub fn gaze_to_direction(x: f64, y: f64) -> Result<[f64; 3], OffsetError> {
    if !(x.abs() < 90.0 && y.abs() < 90.0) {
        return Err(OffsetError::OutOfRange { x, y });
    }
    let v = [x.to_radians().tan(), y.to_radians().tan(), 1.0];
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    Ok([v[0] / norm, v[1] / norm, v[2] / norm])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Angle in dva between the gaze ray and the target ray.
///
/// Evaluated as `atan2(|g x t|, g . t)`, which equals the arccosine of the
/// normalized dot product but stays accurate for small angles. Returns `NaN`
/// when either position is missing or outside the open hemisphere.
pub fn angular_offset(gaze: (f64, f64), target: (f64, f64)) -> f64 {
    let (Ok(g), Ok(t)) = (
        gaze_to_direction(gaze.0, gaze.1),
        gaze_to_direction(target.0, target.1),
    ) else {
        return f64::NAN;
    };
    let c = cross(g, t);
    let sin = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
    sin.atan2(dot(g, t)).to_degrees()
}

/// Per-sample offset; `NaN` where gaze or target is missing.
pub fn offset_series(samples: &[GazeSample]) -> Vec<f64> {
    samples
        .iter()
        .map(|s| {
            if s.has_gaze() && s.has_target() {
                angular_offset((s.gx, s.gy), (s.tx, s.ty))
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// Summary statistics of fixation-filtered offset, in dva.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetFeatureVector {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub iqr: f64,
}

impl OffsetFeatureVector {
    /// Names of the statistics, in `to_array` order.
    pub const NAMES: [&'static str; 6] = ["mean", "median", "std", "min", "max", "iqr"];

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.mean,
            self.median,
            self.std,
            self.min,
            self.max,
            self.iqr,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            mean: a[0],
            median: a[1],
            std: a[2],
            min: a[3],
            max: a[4],
            iqr: a[5],
        }
    }
}

/// Statistics of `theta` over samples covered by fixations; missing values
/// are skipped.
pub fn offset_features(
    theta: &[f64],
    fixations: &[Fixation],
) -> Result<OffsetFeatureVector, OffsetError> {
    let mut covered: Vec<f64> = fixations
        .iter()
        .flat_map(|f| f.range())
        .filter_map(|i| theta.get(i).copied())
        .filter(|v| !v.is_nan())
        .collect();
    if covered.is_empty() {
        return Err(OffsetError::NoFixationData);
    }
    stats::sort_floats(&mut covered);
    Ok(OffsetFeatureVector {
        mean: stats::mean(&covered),
        median: stats::quantile_sorted(&covered, 0.5),
        std: stats::std_population(&covered),
        min: covered[0],
        max: covered[covered.len() - 1],
        iqr: stats::quantile_sorted(&covered, 0.75) - stats::quantile_sorted(&covered, 0.25),
    })
}

/// Which part of a recording feeds the offset statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetScope {
    /// The whole recording.
    #[default]
    Recording,
    /// Only the first `n` 5 s windows, aligned with the embedding windows.
    FirstWindows(usize),
}

/// Offset features of one target-bearing recording.
pub fn recording_offset_features(
    recording: &GazeRecording,
    params: &IdtParams,
    scope: OffsetScope,
) -> Result<OffsetFeatureVector, OffsetError> {
    if !recording.has_targets() {
        return Err(OffsetError::MissingTargets(recording.key().clone()));
    }
    let samples = match scope {
        OffsetScope::Recording => recording.samples(),
        OffsetScope::FirstWindows(n) => {
            let end = (n * recording.samples_per_window()).min(recording.len());
            &recording.samples()[..end]
        }
    };
    let theta = offset_series(samples);
    let fixations = idt_fixations(samples, params);
    offset_features(&theta, &fixations)
}

/// `1 / (1 + d)` with `d` the Euclidean distance between feature vectors.
pub fn offset_similarity(a: &OffsetFeatureVector, b: &OffsetFeatureVector) -> f64 {
    let d = a
        .to_array()
        .iter()
        .zip(b.to_array())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    1.0 / (1.0 + d)
}
