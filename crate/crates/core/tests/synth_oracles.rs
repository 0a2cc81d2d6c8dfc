//! Statistical checks of the synthetic generator against closed forms.

use gazefuse_core::embed::{embed_similarity, EmbeddingIndex};
use gazefuse_core::eval::{eer, form_pairs};
use gazefuse_core::offset::{offset_similarity, recording_offset_features, IdtParams, OffsetScope};
use gazefuse_core::synth;
use gazefuse_core::synth::{expected_cosine_gap, gen_embeddings, subject_signatures, SynthConfig};
use gazefuse_core::Task;

fn similarities(config: &SynthConfig, n_seq: usize) -> (Vec<f64>, Vec<f64>) {
    let subjects = subject_signatures(config);
    let keys = config.keys();
    let index = EmbeddingIndex::new(gen_embeddings(&subjects, &keys, config));
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for pair in form_pairs(&keys, Task::Tex, 1).unwrap() {
        let a = index.aggregate(&pair.enroll, n_seq).unwrap();
        let b = index.aggregate(&pair.auth, n_seq).unwrap();
        let s = embed_similarity(&a, &b).unwrap();
        if pair.label.is_genuine() {
            genuine.push(s);
        } else {
            impostor.push(s);
        }
    }
    (genuine, impostor)
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn zero_separation_makes_classes_indistinguishable() {
    let config = SynthConfig {
        n_subjects: 80,
        duration_s: 10.0,
        embedding_class_separation: 0.0,
        ..SynthConfig::default()
    };
    let (g, i) = similarities(&config, 1);
    let d = ks_statistic(&g, &i);
    // Critical value at the 0.1% level.
    let (n, m) = (g.len() as f64, i.len() as f64);
    let critical = 1.95 * ((n + m) / (n * m)).sqrt();
    assert!(d < critical, "KS {d} >= {critical}");
}

#[test]
fn cosine_gap_matches_closed_form() {
    for (sep, noise) in [(0.3, 1.0), (0.3, 1.6), (0.5, 0.5)] {
        let config = SynthConfig {
            n_subjects: 60,
            duration_s: 20.0,
            embedding_class_separation: sep,
            embedding_noise: noise,
            ..SynthConfig::default()
        };
        for n_seq in [1, 4] {
            let (g, i) = similarities(&config, n_seq);
            let gap = mean(&g) - mean(&i);
            let want = expected_cosine_gap(sep, noise, n_seq);
            assert!(
                (gap - want).abs() < 0.1 * want + 0.01,
                "sep {sep} noise {noise} n_seq {n_seq}: gap {gap}, closed form {want}"
            );
        }
    }
}

#[test]
fn more_windows_lower_baseline_eer() {
    let config = SynthConfig {
        n_subjects: 40,
        duration_s: 20.0,
        ..SynthConfig::default()
    };
    let eers: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|&n| {
            let (g, i) = similarities(&config, n);
            eer(&g, &i).unwrap()
        })
        .collect();
    assert!(eers[0] > eers[1] && eers[1] >= eers[2], "{eers:?}");
}

#[test]
fn planted_offsets_separate_subjects() {
    let config = SynthConfig {
        n_subjects: 30,
        duration_s: 20.0,
        ..SynthConfig::default()
    };
    let corpus = synth::generate(&config).unwrap();
    let idt = IdtParams::default();
    let features = |subject: &str, session: u8| {
        let rec = corpus
            .recordings
            .iter()
            .find(|r| {
                r.key().subject_id == subject
                    && r.key().session.number() == session
                    && r.key().task == Task::Ran
            })
            .unwrap();
        recording_offset_features(rec, &idt, OffsetScope::Recording).unwrap()
    };
    let ids: Vec<String> = corpus.subjects.iter().map(|s| s.id.clone()).collect();
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for a in &ids {
        let enroll = features(a, 2);
        for b in &ids {
            let s = offset_similarity(&enroll, &features(b, 1));
            if a == b {
                genuine.push(s);
            } else {
                impostor.push(s);
            }
        }
    }
    let e = eer(&genuine, &impostor).unwrap();
    assert!(e < 10.0, "offset-only EER {e}");
}
