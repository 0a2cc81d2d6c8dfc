//! Score-level fusion of continuous gaze offset with embedding-based
//! eye-movement biometric similarity.
//!
//! The crate covers the whole batch protocol: recording and embedding
//! ingestion, velocity preprocessing, gaze-offset features, embedding
//! aggregation, from-scratch tree ensembles, fusion strategies,
//! subject-disjoint cross-validation with EER / FRR@FAR metrics, and a
//! synthetic corpus generator for desk-scale checks.

pub mod embed;
pub mod eval;
pub mod fusion;
pub mod ingest;
pub mod offset;
pub mod pipeline;
pub mod preprocess;
pub mod stats;
pub mod synth;
pub mod trees;
pub mod types;

pub use types::{
    GazeRecording, GazeSample, PairLabel, RecordingKey, Session, SubjectPair, Task, WindowKey,
};
