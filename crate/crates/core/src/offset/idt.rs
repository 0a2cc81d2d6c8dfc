//! Dispersion-threshold fixation identification (I-DT).

use serde::{Deserialize, Serialize};

use crate::types::GazeSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdtParams {
    /// Maximum `(max_x - min_x) + (max_y - min_y)` in dva.
    pub dispersion_threshold: f64,
    /// Minimum `t_end - t_start` in ms.
    pub min_duration_ms: f64,
}

impl Default for IdtParams {
    fn default() -> Self {
        Self {
            dispersion_threshold: 1.0,
            min_duration_ms: 100.0,
        }
    }
}

/// A detected fixation; `end_index` is inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub start_index: usize,
    pub end_index: usize,
    pub centroid_x: f64,
    pub centroid_y: f64,
}

impl Fixation {
    pub fn range(&self) -> std::ops::RangeInclusive<usize> {
        self.start_index..=self.end_index
    }

    pub fn duration_ms(&self, samples: &[GazeSample]) -> f64 {
        samples[self.end_index].t_ms - samples[self.start_index].t_ms
    }
}

#[derive(Debug, Clone, Copy)]
struct BoundingBox {
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

impl BoundingBox {
    fn new(s: &GazeSample) -> Self {
        Self {
            min_x: s.gx,
            max_x: s.gx,
            min_y: s.gy,
            max_y: s.gy,
        }
    }

    fn with(mut self, s: &GazeSample) -> Self {
        self.min_x = self.min_x.min(s.gx);
        self.max_x = self.max_x.max(s.gx);
        self.min_y = self.min_y.min(s.gy);
        self.max_y = self.max_y.max(s.gy);
        self
    }

    fn dispersion(&self) -> f64 {
        (self.max_x - self.min_x) + (self.max_y - self.min_y)
    }
}

/// Classic I-DT: open a window spanning the minimum duration, slide it on
/// while its dispersion exceeds the threshold, otherwise grow it until the
/// next sample would exceed the threshold and emit a fixation. Missing gaze
/// samples terminate any candidate window.
pub fn idt_fixations(samples: &[GazeSample], params: &IdtParams) -> Vec<Fixation> {
    let n = samples.len();
    let mut out = Vec::new();
    let mut i = 0;
    'outer: while i < n {
        if !samples[i].has_gaze() {
            i += 1;
            continue;
        }
        let mut bbox = BoundingBox::new(&samples[i]);
        let mut j = i;
        while samples[j].t_ms - samples[i].t_ms < params.min_duration_ms {
            j += 1;
            if j == n {
                break 'outer;
            }
            if !samples[j].has_gaze() {
                // Every later start needs an end at or past j as well.
                i = j + 1;
                continue 'outer;
            }
            bbox = bbox.with(&samples[j]);
        }
        if bbox.dispersion() > params.dispersion_threshold {
            i += 1;
            continue;
        }
        while j + 1 < n && samples[j + 1].has_gaze() {
            let grown = bbox.with(&samples[j + 1]);
            if grown.dispersion() > params.dispersion_threshold {
                break;
            }
            bbox = grown;
            j += 1;
        }
        let count = (j - i + 1) as f64;
        let (sx, sy) = samples[i..=j]
            .iter()
            .fold((0.0, 0.0), |(ax, ay), s| (ax + s.gx, ay + s.gy));
        out.push(Fixation {
            start_index: i,
            end_index: j,
            centroid_x: sx / count,
            centroid_y: sy / count,
        });
        i = j + 1;
    }
    out
}
