//! Embedding aggregation and similarity.
//!
//! For a recording and a subsequence count `n_seq`, each fold's embedding is
//! averaged over the first `n_seq` windows and the four fold centroids are
//! concatenated into one 512-dimensional vector. Two such vectors are compared
//! by cosine similarity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{EmbeddingRecord, EMBEDDING_DIM, N_FOLDS};
use crate::types::RecordingKey;

/// Subsequence counts evaluated by the pipeline (5 to 40 seconds).
pub const N_SEQ_GRID: [usize; 6] = [1, 2, 3, 4, 6, 8];

pub const AGGREGATED_DIM: usize = EMBEDDING_DIM * N_FOLDS as usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("{recording}: no embedding for window {window} fold {fold}")]
    MissingWindow {
        recording: RecordingKey,
        window: u32,
        fold: u8,
    },
    #[error("{recording}: no embeddings for fold {fold}")]
    MissingFold { recording: RecordingKey, fold: u8 },
    #[error("no embeddings for recording {0}")]
    UnknownRecording(RecordingKey),
    #[error("no embedding records given")]
    NoRecords,
    #[error("records mix recordings {0} and {1}")]
    MixedRecordings(RecordingKey, RecordingKey),
    #[error("n_seq must be at least 1")]
    InvalidNSeq,
    #[error("cannot compare n_seq={0} with n_seq={1}")]
    NSeqMismatch(usize, usize),
    #[error("zero embedding vector for {0}")]
    ZeroVector(RecordingKey),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedEmbedding {
    pub recording: RecordingKey,
    pub n_seq: usize,
    pub vector: Vec<f64>,
}

/// Per-fold centroid over windows `0..n_seq`, folds concatenated in order.
/// `records` must all belong to one recording.
pub fn aggregate(
    records: &[EmbeddingRecord],
    n_seq: usize,
) -> Result<AggregatedEmbedding, EmbedError> {
    let recording = records
        .first()
        .map(|r| r.window.recording.clone())
        .ok_or(EmbedError::NoRecords)?;
    if let Some(other) = records.iter().find(|r| r.window.recording != recording) {
        return Err(EmbedError::MixedRecordings(
            recording,
            other.window.recording.clone(),
        ));
    }
    let index = EmbeddingIndex::new(records.iter().cloned());
    index.aggregate(&recording, n_seq)
}

/// Embeddings keyed by recording, then (window, fold).
#[derive(Debug, Clone, Default)]
pub struct EmbeddingIndex {
    map: BTreeMap<RecordingKey, BTreeMap<(u32, u8), Vec<f32>>>,
}

impl EmbeddingIndex {
    pub fn new(records: impl IntoIterator<Item = EmbeddingRecord>) -> Self {
        let mut map: BTreeMap<RecordingKey, BTreeMap<(u32, u8), Vec<f32>>> = BTreeMap::new();
        for r in records {
            map.entry(r.window.recording)
                .or_default()
                .insert((r.window.window_index, r.fold_id), r.vector);
        }
        Self { map }
    }

    pub fn recordings(&self) -> impl Iterator<Item = &RecordingKey> {
        self.map.keys()
    }

    pub fn contains(&self, key: &RecordingKey) -> bool {
        self.map.contains_key(key)
    }

    pub fn aggregate(
        &self,
        recording: &RecordingKey,
        n_seq: usize,
    ) -> Result<AggregatedEmbedding, EmbedError> {
        if n_seq == 0 {
            return Err(EmbedError::InvalidNSeq);
        }
        let windows = self
            .map
            .get(recording)
            .ok_or_else(|| EmbedError::UnknownRecording(recording.clone()))?;
        let mut vector = Vec::with_capacity(AGGREGATED_DIM);
        for fold in 0..N_FOLDS {
            if !windows.keys().any(|&(_, f)| f == fold) {
                return Err(EmbedError::MissingFold {
                    recording: recording.clone(),
                    fold,
                });
            }
            let mut sum = vec![0.0f64; EMBEDDING_DIM];
            for w in 0..n_seq as u32 {
                let v = windows
                    .get(&(w, fold))
                    .ok_or_else(|| EmbedError::MissingWindow {
                        recording: recording.clone(),
                        window: w,
                        fold,
                    })?;
                for (s, x) in sum.iter_mut().zip(v) {
                    *s += *x as f64;
                }
            }
            vector.extend(sum.into_iter().map(|s| s / n_seq as f64));
        }
        Ok(AggregatedEmbedding {
            recording: recording.clone(),
            n_seq,
            vector,
        })
    }
}

/// Cosine similarity of two aggregated embeddings.
pub fn embed_similarity(
    enroll: &AggregatedEmbedding,
    auth: &AggregatedEmbedding,
) -> Result<f64, EmbedError> {
    if enroll.n_seq != auth.n_seq {
        return Err(EmbedError::NSeqMismatch(enroll.n_seq, auth.n_seq));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(&enroll.vector), norm(&auth.vector));
    if na == 0.0 {
        return Err(EmbedError::ZeroVector(enroll.recording.clone()));
    }
    if nb == 0.0 {
        return Err(EmbedError::ZeroVector(auth.recording.clone()));
    }
    let d: f64 = enroll
        .vector
        .iter()
        .zip(&auth.vector)
        .map(|(a, b)| a * b)
        .sum();
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}
