use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::ingest::IngestError;
use crate::types::{PairLabel, RecordingKey, Session, SubjectPair, Task};

/// One enrollment/authentication comparison.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub enroll: RecordingKey,
    pub auth: RecordingKey,
    pub label: PairLabel,
}

impl Pair {
    pub fn new(enroll: RecordingKey, auth: RecordingKey) -> Self {
        let label = PairLabel::between(&enroll.subject_id, &auth.subject_id);
        Self {
            enroll,
            auth,
            label,
        }
    }

    pub fn group(&self) -> SubjectPair {
        SubjectPair::new(&self.enroll.subject_id, &self.auth.subject_id)
    }
}

/// Every session-2 enrollment against every session-1 authentication of
/// `task` in `round`, enrollment-major in subject order.
pub fn form_pairs(
    recordings: &[RecordingKey],
    task: Task,
    round: u32,
) -> Result<Vec<Pair>, EvalError> {
    let mut by_subject: BTreeMap<&str, (Option<&RecordingKey>, Option<&RecordingKey>)> =
        BTreeMap::new();
    for k in recordings
        .iter()
        .filter(|k| k.task == task && k.round == round)
    {
        let slot = by_subject.entry(&k.subject_id).or_default();
        match k.session {
            Session::One => slot.0 = Some(k),
            Session::Two => slot.1 = Some(k),
        }
    }
    let mut enroll = Vec::new();
    let mut auth = Vec::new();
    for (subject, (s1, s2)) in &by_subject {
        match (s1, s2) {
            (Some(a), Some(e)) => {
                auth.push(*a);
                enroll.push(*e);
            }
            (None, _) => return Err(EvalError::MissingSession(subject.to_string(), 1)),
            (_, None) => return Err(EvalError::MissingSession(subject.to_string(), 2)),
        }
    }
    Ok(enroll
        .iter()
        .flat_map(|e| auth.iter().map(|a| Pair::new((*e).clone(), (*a).clone())))
        .collect())
}

/// Distinct subjects in a pair list, sorted.
pub fn subjects_of(pairs: &[Pair]) -> BTreeSet<String> {
    pairs
        .iter()
        .flat_map(|p| [p.enroll.subject_id.clone(), p.auth.subject_id.clone()])
        .collect()
}

const PAIR_HEADER: [&str; 8] = [
    "enroll_subject",
    "enroll_round",
    "enroll_session",
    "auth_subject",
    "auth_round",
    "auth_session",
    "task",
    "label",
];

pub fn write_pairs(path: &Path, pairs: &[Pair]) -> Result<(), IngestError> {
    let file = crate::ingest::create(path)?;
    write_pairs_to(std::io::BufWriter::new(file), pairs)
}

pub fn write_pairs_to<W: Write>(writer: W, pairs: &[Pair]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PAIR_HEADER)?;
    for p in pairs {
        w.write_record([
            p.enroll.subject_id.as_str(),
            &p.enroll.round.to_string(),
            &p.enroll.session.to_string(),
            &p.auth.subject_id,
            &p.auth.round.to_string(),
            &p.auth.session.to_string(),
            p.enroll.task.as_str(),
            p.label.as_str(),
        ])?;
    }
    w.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<Pair>, IngestError> {
    read_pairs_from(crate::ingest::open(path)?)
}

pub fn read_pairs_from<R: Read>(reader: R) -> Result<Vec<Pair>, IngestError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::MissingColumn(name.into()))
    };
    let idx: Vec<usize> = PAIR_HEADER[..7]
        .iter()
        .map(|&n| col(n))
        .collect::<Result<_, _>>()?;
    let label_col = headers.iter().position(|h| h.trim() == "label");
    let mut out = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let line = row as u64 + 2;
        let field = |i: usize| record.get(idx[i]).unwrap_or("").trim();
        let int = |i: usize, column: &'static str| -> Result<i64, IngestError> {
            field(i).parse().map_err(|_| IngestError::BadValue {
                line,
                column: column.into(),
                value: field(i).to_string(),
            })
        };
        let task: Task = field(6)
            .parse()
            .map_err(|source| IngestError::Key { line, source })?;
        let key = |s: usize, r: usize, se: usize, rc: &'static str, sc: &'static str| {
            let round = int(r, rc)?;
            let session = int(se, sc)?;
            RecordingKey::from_parts(field(s), round, session, task)
                .map_err(|source| IngestError::Key { line, source })
        };
        let pair = Pair::new(
            key(0, 1, 2, "enroll_round", "enroll_session")?,
            key(3, 4, 5, "auth_round", "auth_session")?,
        );
        if let Some(c) = label_col {
            let given = record.get(c).unwrap_or("").trim();
            let parsed: PairLabel = given.parse().map_err(|_| IngestError::BadValue {
                line,
                column: "label".into(),
                value: given.to_string(),
            })?;
            if parsed != pair.label {
                return Err(IngestError::BadValue {
                    line,
                    column: "label".into(),
                    value: given.to_string(),
                });
            }
        }
        out.push(pair);
    }
    Ok(out)
}
