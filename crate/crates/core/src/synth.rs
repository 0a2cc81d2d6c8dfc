//! Synthetic corpora with planted subject signatures.
//!
//! Each subject has a persistent 2-D gaze bias. RAN recordings show a target
//! that jumps every second; gaze lands on `target + bias + jitter`, where the
//! jitter is redrawn per target (`offset_noise`) plus a small per-sample
//! tremor. TEX recordings have no targets and step through a reading-like
//! fixation grid with the same bias.
//!
//! Embeddings per subject, task and fold come from a unit anchor
//! `normalize(sqrt(1 - sep) * c + sqrt(sep) * u)` where `c` is shared by all
//! subjects and `u` is subject specific; each window adds Gaussian noise of
//! expected norm `embedding_noise` and is renormalized.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{
    write_embeddings, write_recording, EmbeddingRecord, IngestError, Manifest, ManifestEntry,
    EMBEDDING_DIM, N_FOLDS,
};
use crate::types::{GazeRecording, GazeSample, RecordingKey, Task, WindowKey, WINDOW_SECONDS};

/// Target dwell on the RAN task, ms.
const TARGET_PERIOD_MS: f64 = 1000.0;
/// Duration of the transition between targets, ms.
const SACCADE_MS: f64 = 30.0;
/// Fixation dwell on the TEX task, ms.
const READING_FIXATION_MS: f64 = 250.0;
/// Blink gap length, ms.
const BLINK_MS: f64 = 100.0;
/// Smallest RAN target jump, dva. Keeps transition samples out of
/// fixations at 250 Hz.
const MIN_JUMP_DVA: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("need at least 2 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("{0} must be finite and non-negative")]
    Negative(&'static str),
    #[error("embedding class separation must lie in [0, 1], got {0}")]
    Separation(f64),
    #[error("duration {0} s is shorter than one 5 s window")]
    TooShort(f64),
    #[error("sampling rate must be positive, got {0}")]
    Rate(f64),
    #[error("target range must lie in (0, 60) dva, got {0}")]
    TargetRange(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub rounds: u32,
    pub rate_hz: f64,
    pub duration_s: f64,
    /// Standard deviation of the per-subject bias on each axis, dva.
    pub offset_signature_spread: f64,
    /// Standard deviation of the per-target offset jitter on each axis, dva.
    pub offset_noise: f64,
    /// Per-sample tremor standard deviation on each axis, dva.
    pub sample_noise: f64,
    /// Targets are uniform in `[-range, range]` on both axes, dva.
    pub target_range: f64,
    /// Probability of a 100 ms blink gap in each second.
    pub blink_probability: f64,
    /// Share of anchor variance that is subject specific, in `[0, 1]`.
    pub embedding_class_separation: f64,
    /// Expected norm of the per-window embedding noise.
    pub embedding_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 60,
            rounds: 1,
            rate_hz: 250.0,
            duration_s: 40.0,
            offset_signature_spread: 1.0,
            offset_noise: 0.15,
            sample_noise: 0.02,
            target_range: 15.0,
            blink_probability: 0.1,
            embedding_class_separation: 0.3,
            embedding_noise: 1.6,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_subjects < 2 {
            return Err(SynthError::TooFewSubjects(self.n_subjects));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(SynthError::Rate(self.rate_hz));
        }
        if self.duration_s.is_nan() || self.duration_s < WINDOW_SECONDS {
            return Err(SynthError::TooShort(self.duration_s));
        }
        if !(self.target_range > 0.0 && self.target_range < 60.0) {
            return Err(SynthError::TargetRange(self.target_range));
        }
        for (name, v) in [
            ("offset_signature_spread", self.offset_signature_spread),
            ("offset_noise", self.offset_noise),
            ("sample_noise", self.sample_noise),
            ("embedding_noise", self.embedding_noise),
            ("blink_probability", self.blink_probability),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SynthError::Negative(name));
            }
        }
        if !(0.0..=1.0).contains(&self.embedding_class_separation) {
            return Err(SynthError::Separation(self.embedding_class_separation));
        }
        Ok(())
    }

    pub fn window_count(&self) -> usize {
        let n = (self.duration_s * self.rate_hz).round() as usize;
        n / crate::types::samples_per_window(self.rate_hz)
    }

    /// Every recording key of the corpus in sorted order.
    pub fn keys(&self) -> Vec<RecordingKey> {
        let mut keys = Vec::new();
        for s in 0..self.n_subjects {
            for round in 1..=self.rounds {
                for session in [1, 2] {
                    for task in Task::ALL {
                        keys.push(
                            RecordingKey::new(subject_id(s), round, session, task)
                                .expect("valid generated key"),
                        );
                    }
                }
            }
        }
        keys.sort();
        keys
    }
}

pub fn subject_id(index: usize) -> String {
    format!("S{index:03}")
}

/// A subject's persistent traits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSignature {
    pub index: usize,
    pub id: String,
    /// Gaze bias (x, y) in dva.
    pub bias: (f64, f64),
}

// Independent generator families, one per kind of draw.
const STREAM_SIGNATURE: u64 = 1;
const STREAM_RECORDING: u64 = 2;
const STREAM_ANCHOR: u64 = 3;
const STREAM_WINDOW: u64 = 4;

fn rng_for(seed: u64, family: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ family.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stream);
    rng
}

fn task_index(task: Task) -> u64 {
    match task {
        Task::Ran => 0,
        Task::Tex => 1,
    }
}

fn recording_stream(subject: usize, key: &RecordingKey) -> u64 {
    (((subject as u64) << 32) | (key.round as u64) << 8)
        | (u64::from(key.session.number()) << 1)
        | task_index(key.task)
}

pub fn subject_signatures(config: &SynthConfig) -> Vec<SubjectSignature> {
    (0..config.n_subjects)
        .map(|index| {
            let mut rng = rng_for(config.seed, STREAM_SIGNATURE, index as u64);
            let spread = config.offset_signature_spread;
            let mut draw = || spread * rng.sample::<f64, _>(StandardNormal);
            let bias = (draw(), draw());
            SubjectSignature {
                index,
                id: subject_id(index),
                bias,
            }
        })
        .collect()
}

fn gauss(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        0.0
    } else {
        sd * rng.sample::<f64, _>(StandardNormal)
    }
}

/// Reading-like fixation positions: left to right along lines, top to bottom.
fn reading_position(k: usize, range: f64) -> (f64, f64) {
    let per_line = 12;
    let lines = 8;
    let x = -range * 0.8 + (k % per_line) as f64 * (1.6 * range / (per_line - 1) as f64);
    let y = range * 0.5 - ((k / per_line) % lines) as f64 * (range / (lines - 1) as f64);
    (x, y)
}

/// One recording for `subject`; deterministic in (seed, subject, key).
pub fn gen_recording(
    subject: &SubjectSignature,
    key: &RecordingKey,
    config: &SynthConfig,
) -> GazeRecording {
    let mut rng = rng_for(
        config.seed,
        STREAM_RECORDING,
        recording_stream(subject.index, key),
    );
    let n = (config.duration_s * config.rate_hz).round() as usize;
    let dt = 1000.0 / config.rate_hz;
    let period = match key.task {
        Task::Ran => TARGET_PERIOD_MS,
        Task::Tex => READING_FIXATION_MS,
    };
    let n_periods = (n as f64 * dt / period).ceil() as usize + 1;
    let range = config.target_range;
    // Stimulus position and landing point of every dwell period.
    let mut stimulus = Vec::with_capacity(n_periods);
    let mut landing = Vec::with_capacity(n_periods);
    for k in 0..n_periods {
        let target = match key.task {
            Task::Ran => loop {
                let t = (
                    rng.random_range(-range..=range),
                    rng.random_range(-range..=range),
                );
                let jump = stimulus
                    .last()
                    .map_or(f64::INFINITY, |p: &(f64, f64)| (t.0 - p.0).hypot(t.1 - p.1));
                if jump >= MIN_JUMP_DVA.min(range) {
                    break t;
                }
            },
            Task::Tex => reading_position(k, range),
        };
        let jitter = (
            gauss(&mut rng, config.offset_noise),
            gauss(&mut rng, config.offset_noise),
        );
        stimulus.push(target);
        landing.push((
            target.0 + subject.bias.0 + jitter.0,
            target.1 + subject.bias.1 + jitter.1,
        ));
    }
    let seconds = (n as f64 * dt / 1000.0).ceil() as usize;
    let blinks: Vec<Option<f64>> = (0..seconds)
        .map(|_| {
            rng.random_bool(config.blink_probability.min(1.0))
                .then(|| rng.random_range(0.0..1000.0 - BLINK_MS))
        })
        .collect();

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let k = (t / period) as usize;
        let into = t - k as f64 * period;
        let (lx, ly) = landing[k];
        // The eye starts moving at target onset and lands SACCADE_MS later.
        // Transition samples are evenly spaced, so neighbours of either
        // landing sit at least MIN_JUMP_DVA / steps away from it.
        let steps = (SACCADE_MS / dt).ceil().max(1.0);
        let step = (into / dt).round() + 1.0;
        let (mut gx, mut gy) = if k > 0 && step < steps {
            let (px, py) = landing[k - 1];
            let f = step / steps;
            (px + f * (lx - px), py + f * (ly - py))
        } else {
            (lx, ly)
        };
        gx += gauss(&mut rng, config.sample_noise);
        gy += gauss(&mut rng, config.sample_noise);
        let second = (t / 1000.0) as usize;
        if let Some(start) = blinks[second] {
            let within = t - second as f64 * 1000.0;
            if within >= start && within < start + BLINK_MS && i > 0 {
                gx = f64::NAN;
                gy = f64::NAN;
            }
        }
        let (tx, ty) = match key.task {
            Task::Ran => stimulus[k],
            Task::Tex => (f64::NAN, f64::NAN),
        };
        samples.push(GazeSample::new(t, gx, gy, tx, ty));
    }
    GazeRecording::new(key.clone(), config.rate_hz, samples)
        .expect("generated samples are uniformly spaced with gaze at t=0")
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..EMBEDDING_DIM)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    normalize(&mut v);
    v
}

/// Unit anchor of (subject, task, fold). Subject index `None` gives the
/// shared component.
fn anchor_part(config: &SynthConfig, subject: Option<usize>, task: Task, fold: u8) -> Vec<f64> {
    let who = subject.map_or(0, |s| s as u64 + 1);
    let stream = (who << 16) | (task_index(task) << 8) | u64::from(fold);
    random_unit(&mut rng_for(config.seed, STREAM_ANCHOR, stream))
}

pub fn anchor(config: &SynthConfig, subject: usize, task: Task, fold: u8) -> Vec<f64> {
    let sep = config.embedding_class_separation;
    let common = anchor_part(config, None, task, fold);
    let own = anchor_part(config, Some(subject), task, fold);
    let mut a: Vec<f64> = common
        .iter()
        .zip(&own)
        .map(|(c, u)| (1.0 - sep).sqrt() * c + sep.sqrt() * u)
        .collect();
    normalize(&mut a);
    a
}

/// Window embeddings of every recording in `keys`, all folds.
pub fn gen_embeddings(
    subjects: &[SubjectSignature],
    keys: &[RecordingKey],
    config: &SynthConfig,
) -> Vec<EmbeddingRecord> {
    let by_id: std::collections::BTreeMap<&str, &SubjectSignature> =
        subjects.iter().map(|s| (s.id.as_str(), s)).collect();
    let n_windows = config.window_count();
    let per_dim = config.embedding_noise / (EMBEDDING_DIM as f64).sqrt();
    keys.par_iter()
        .filter_map(|key| by_id.get(key.subject_id.as_str()).map(|s| (key, *s)))
        .flat_map_iter(|(key, subject)| {
            let mut rng = rng_for(
                config.seed,
                STREAM_WINDOW,
                recording_stream(subject.index, key),
            );
            let noise = Normal::new(0.0, per_dim.max(f64::MIN_POSITIVE)).expect("finite noise");
            let anchors: Vec<Vec<f64>> = (0..N_FOLDS)
                .map(|f| anchor(config, subject.index, key.task, f))
                .collect();
            let mut out = Vec::with_capacity(n_windows * N_FOLDS as usize);
            for w in 0..n_windows {
                for (fold, a) in anchors.iter().enumerate() {
                    let mut v: Vec<f64> = a
                        .iter()
                        .map(|x| {
                            x + if per_dim > 0.0 {
                                noise.sample(&mut rng)
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    normalize(&mut v);
                    out.push(EmbeddingRecord {
                        window: WindowKey {
                            recording: key.clone(),
                            window_index: w as u32,
                        },
                        fold_id: fold as u8,
                        vector: v.iter().map(|&x| x as f32).collect(),
                    });
                }
            }
            out
        })
        .collect()
}

/// Approximate genuine-minus-impostor mean cosine for aggregated embeddings
/// of `n_seq` windows: `sep / (1 + noise^2 / n_seq)`.
pub fn expected_cosine_gap(separation: f64, noise: f64, n_seq: usize) -> f64 {
    separation / (1.0 + noise * noise / n_seq as f64)
}

/// A generated corpus held in memory.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub subjects: Vec<SubjectSignature>,
    pub recordings: Vec<GazeRecording>,
    pub embeddings: Vec<EmbeddingRecord>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    config.validate()?;
    let subjects = subject_signatures(config);
    let keys = config.keys();
    let recordings = keys
        .par_iter()
        .map(|k| {
            let index: usize = k.subject_id[1..].parse().expect("generated subject id");
            gen_recording(&subjects[index], k, config)
        })
        .collect();
    let embeddings = gen_embeddings(&subjects, &keys, config);
    Ok(SynthCorpus {
        config: config.clone(),
        subjects,
        recordings,
        embeddings,
    })
}

/// File name of a recording inside a corpus directory.
pub fn recording_file_name(key: &RecordingKey) -> String {
    format!(
        "{}_r{}_s{}_{}.csv",
        key.subject_id, key.round, key.session, key.task
    )
}

impl SynthCorpus {
    /// Write `recordings/*.csv`, `embeddings.csv` and `manifest.json` under
    /// `dir`; returns the manifest.
    pub fn write(&self, dir: &Path) -> Result<Manifest, IngestError> {
        let rec_dir = dir.join("recordings");
        let entries = self
            .recordings
            .par_iter()
            .map(|r| {
                let rel = Path::new("recordings").join(recording_file_name(r.key()));
                write_recording(&rec_dir.join(recording_file_name(r.key())), r)?;
                Ok(ManifestEntry {
                    subject: r.key().subject_id.clone(),
                    round: r.key().round,
                    session: r.key().session.number(),
                    task: r.key().task,
                    path: rel,
                    rate_hz: r.rate_hz(),
                })
            })
            .collect::<Result<Vec<_>, IngestError>>()?;
        write_embeddings(&dir.join("embeddings.csv"), &self.embeddings)?;
        let manifest = Manifest::new(entries, Some("embeddings.csv".into()));
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::offset::{offset_series, recording_offset_features, IdtParams, OffsetScope};

    fn small() -> SynthConfig {
        SynthConfig {
            n_subjects: 3,
            duration_s: 10.0,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_session_specific() {
        let c = small();
        let s = subject_signatures(&c);
        let k1 = RecordingKey::new("S001", 1, 1, Task::Ran).unwrap();
        let k2 = RecordingKey::new("S001", 1, 2, Task::Ran).unwrap();
        let a = gen_recording(&s[1], &k1, &c);
        assert_eq!(a, gen_recording(&s[1], &k1, &c));
        assert_ne!(a.samples(), gen_recording(&s[1], &k2, &c).samples());
        assert_eq!(a.len(), 2500);
        assert!(a.has_targets());
        let tex = gen_recording(&s[1], &k1.with_task(Task::Tex), &c);
        assert!(!tex.has_targets());
    }

    #[test]
    fn noiseless_zero_bias_has_zero_offset_on_fixations() {
        let c = SynthConfig {
            offset_signature_spread: 0.0,
            offset_noise: 0.0,
            sample_noise: 0.0,
            blink_probability: 0.0,
            ..small()
        };
        let s = subject_signatures(&c);
        let rec = gen_recording(
            &s[0],
            &RecordingKey::new("S000", 1, 1, Task::Ran).unwrap(),
            &c,
        );
        let theta = offset_series(rec.samples());
        // Every sample outside a transition sits exactly on its target.
        for (i, t) in theta.iter().enumerate() {
            // 250 Hz: 250 samples per target, the first 7 in transit.
            if i < 250 || i % 250 >= 7 {
                assert!(*t < 1e-9, "sample {i}: {t}");
            }
        }
        let f =
            recording_offset_features(&rec, &IdtParams::default(), OffsetScope::Recording).unwrap();
        assert!(f.max < 1e-9, "{f:?}");
    }

    #[test]
    fn planted_bias_recovered() {
        let c = SynthConfig {
            offset_noise: 0.0,
            sample_noise: 0.0,
            blink_probability: 0.0,
            ..small()
        };
        let mut s = subject_signatures(&c);
        s[0].bias = (1.0, 0.0);
        let rec = gen_recording(
            &s[0],
            &RecordingKey::new("S000", 1, 1, Task::Ran).unwrap(),
            &c,
        );
        let theta = offset_series(rec.samples());
        let fixations = crate::offset::idt_fixations(rec.samples(), &IdtParams::default());
        let covered: Vec<f64> = fixations
            .iter()
            .flat_map(|f| f.range())
            .map(|i| theta[i])
            .collect();
        let f =
            recording_offset_features(&rec, &IdtParams::default(), OffsetScope::Recording).unwrap();
        let oracle = covered.iter().sum::<f64>() / covered.len() as f64;
        assert!((f.mean - oracle).abs() < 1e-12);
        // Horizontal 1 dva shifts stay close to 1 dva of arc within +-15 dva.
        assert!(f.min > 0.85 && f.max < 1.01, "{f:?}");
    }

    #[test]
    fn noiseless_embeddings_are_identical_across_sessions() {
        let c = SynthConfig {
            embedding_noise: 0.0,
            ..small()
        };
        let s = subject_signatures(&c);
        let keys = c.keys();
        let e = gen_embeddings(&s, &keys, &c);
        assert_eq!(e.len(), keys.len() * 2 * N_FOLDS as usize);
        let idx = crate::embed::EmbeddingIndex::new(e);
        let a = idx.aggregate(&keys[0], 1).unwrap();
        let b = idx
            .aggregate(
                &RecordingKey::new(&keys[0].subject_id, 1, 2, keys[0].task).unwrap(),
                1,
            )
            .unwrap();
        assert!((crate::embed::embed_similarity(&a, &b).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig::default().validate().is_ok());
        assert_eq!(
            SynthConfig {
                n_subjects: 1,
                ..Default::default()
            }
            .validate(),
            Err(SynthError::TooFewSubjects(1))
        );
        assert!(SynthConfig {
            embedding_class_separation: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            duration_s: 4.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn corpus_writes_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate(&small()).unwrap();
        let manifest = corpus.write(dir.path()).unwrap();
        assert_eq!(manifest.recordings.len(), 12);
        let loaded = Manifest::load(&dir.path().join("manifest.json")).unwrap();
        let recs = loaded.load_recordings().unwrap();
        assert_eq!(recs.len(), corpus.recordings.len());
        let bits = |r: &GazeRecording| -> Vec<[u64; 5]> {
            r.samples()
                .iter()
                .map(|s| [s.t_ms, s.gx, s.gy, s.tx, s.ty].map(f64::to_bits))
                .collect()
        };
        for (a, b) in recs.iter().zip(&corpus.recordings) {
            assert_eq!(a.key(), b.key());
            assert_eq!(bits(a), bits(b));
        }
        let emb = crate::ingest::parse_embeddings(&loaded.embeddings_path().unwrap()).unwrap();
        assert_eq!(emb, corpus.embeddings);
    }
}
