//! Subject-disjoint outer folds.
//!
//! Subjects are shuffled and dealt round-robin into `k` groups. A pair is a
//! test pair of fold `i` when both of its subjects are in group `i`, and a
//! training pair of fold `i` when neither subject is. Pairs that touch group
//! `i` and another group are unused by fold `i`.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::types::SubjectPair;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    /// Group index of every subject.
    pub groups: BTreeMap<String, usize>,
}

pub fn subject_disjoint_folds<'a>(
    subjects: impl IntoIterator<Item = &'a str>,
    k: usize,
    seed: u64,
) -> Result<FoldAssignment, EvalError> {
    let unique: BTreeSet<&str> = subjects.into_iter().collect();
    if k == 0 || unique.len() < k {
        return Err(EvalError::TooFewSubjects {
            needed: k.max(1),
            found: unique.len(),
        });
    }
    let mut order: Vec<&str> = unique.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let groups = order
        .iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i % k))
        .collect();
    Ok(FoldAssignment { k, seed, groups })
}

/// Row indices of one fold.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Outcome of checking every fold for subject overlap.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAudit {
    pub folds: usize,
    pub leaked_subjects: usize,
    pub test_pairs: Vec<usize>,
    pub train_pairs: Vec<usize>,
}

impl FoldAudit {
    pub fn passed(&self) -> bool {
        self.leaked_subjects == 0
    }
}

impl FoldAssignment {
    pub fn group_of(&self, subject: &str) -> Option<usize> {
        self.groups.get(subject).copied()
    }

    /// Test fold of a pair, if both subjects share a group.
    pub fn test_fold(&self, pair: &SubjectPair) -> Option<usize> {
        let a = self.group_of(pair.first())?;
        let b = self.group_of(pair.second())?;
        (a == b).then_some(a)
    }

    pub fn is_train(&self, pair: &SubjectPair, fold: usize) -> bool {
        match (self.group_of(pair.first()), self.group_of(pair.second())) {
            (Some(a), Some(b)) => a != fold && b != fold,
            _ => false,
        }
    }

    pub fn split(&self, pairs: &[SubjectPair], fold: usize) -> FoldSplit {
        let mut s = FoldSplit::default();
        for (i, p) in pairs.iter().enumerate() {
            if self.test_fold(p) == Some(fold) {
                s.test.push(i);
            } else if self.is_train(p, fold) {
                s.train.push(i);
            }
        }
        s
    }

    /// Recount, for every fold, subjects appearing on both sides.
    pub fn audit(&self, pairs: &[SubjectPair]) -> FoldAudit {
        let mut audit = FoldAudit {
            folds: self.k,
            leaked_subjects: 0,
            test_pairs: Vec::new(),
            train_pairs: Vec::new(),
        };
        for fold in 0..self.k {
            let s = self.split(pairs, fold);
            audit.leaked_subjects += leaked(pairs, &s.train, &s.test).len();
            audit.test_pairs.push(s.test.len());
            audit.train_pairs.push(s.train.len());
        }
        audit
    }
}

/// Subjects present in both the training and the test rows.
pub fn leaked(pairs: &[SubjectPair], train: &[usize], test: &[usize]) -> BTreeSet<String> {
    let collect = |rows: &[usize]| -> BTreeSet<String> {
        rows.iter()
            .flat_map(|&i| [pairs[i].first().to_string(), pairs[i].second().to_string()])
            .collect()
    };
    collect(train)
        .intersection(&collect(test))
        .cloned()
        .collect()
}
