use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::cv::CvOutcome;
use super::folds::FoldAudit;
use super::metrics::RocPoint;
use crate::fusion::FusionMethod;
use crate::trees::{Candidate, EnsembleKind};
use crate::types::Task;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub eer_percent: f64,
    pub frr_percent: f64,
    pub reliable: bool,
    /// Weighted fusion: alpha chosen on this fold's test pairs.
    pub alpha: Option<f64>,
    /// Learned fusion: hyperparameters of the fitted model.
    pub model: Option<Candidate>,
    pub inner_cv_eer: Option<f64>,
}

/// Cross-validated result of one (task, method, n_seq) configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub task: Task,
    pub method: FusionMethod,
    pub n_seq: usize,
    pub recipe: Option<String>,
    pub model_kind: Option<EnsembleKind>,
    pub seed: u64,
    pub k: usize,
    pub far_target: f64,
    /// Mean over folds.
    pub eer_percent: f64,
    pub eer_std: f64,
    /// Mean over folds.
    pub frr_percent: f64,
    /// True only if every fold had enough impostors for `far_target`.
    pub frr_reliable: bool,
    pub pooled_eer_percent: f64,
    pub roc: Vec<RocPoint>,
    pub folds: Vec<FoldMetrics>,
    pub audit: FoldAudit,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn from_outcome(
        outcome: &CvOutcome,
        task: Task,
        method: FusionMethod,
        n_seq: usize,
        model_kind: Option<EnsembleKind>,
        far_target: f64,
    ) -> Self {
        let mut warnings = Vec::new();
        let frr_reliable = outcome.folds.iter().all(|f| f.reliable);
        if !frr_reliable {
            warnings.push(format!(
                "FRR at FAR={far_target:e} is unreliable: fewer than {:.0} impostor pairs per fold",
                10.0 / far_target
            ));
        }
        if method == FusionMethod::Weighted {
            warnings.push("weighted fusion uses oracle-alpha chosen on the reported pairs".into());
        }
        if !outcome.audit.passed() {
            warnings.push(format!(
                "fold audit found {} leaked subjects",
                outcome.audit.leaked_subjects
            ));
        }
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            task,
            method,
            n_seq,
            recipe: method.recipe().map(|r| r.id().to_string()),
            model_kind: if method.is_learned() {
                model_kind
            } else {
                None
            },
            seed: outcome.assignment.seed,
            k: outcome.assignment.k,
            far_target,
            eer_percent: outcome.mean_eer,
            eer_std: outcome.std_eer,
            frr_percent: outcome.mean_frr,
            frr_reliable,
            pooled_eer_percent: outcome.pooled_eer,
            roc: outcome.roc.clone(),
            folds: outcome.folds.clone(),
            audit: outcome.audit.clone(),
            warnings,
        }
    }
}

/// One line of the Table-1 layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableRow {
    pub eer: BTreeMap<FusionMethod, f64>,
    pub frr: BTreeMap<FusionMethod, f64>,
}

const TABLE_METHODS: [(FusionMethod, &str); 5] = [
    (FusionMethod::Baseline, "EKYT"),
    (FusionMethod::Tree, "Tree"),
    (FusionMethod::Weighted, "Weighted"),
    (FusionMethod::CrossTask, "Cross-task"),
    (FusionMethod::Triple, "Triple"),
];

/// CSV with one row per (task, n_seq) and EER then FRR columns per method,
/// percentages to one decimal. Methods without a report leave empty cells.
pub fn render_table(reports: &[EvalReport]) -> String {
    let mut rows: BTreeMap<(Task, usize), TableRow> = BTreeMap::new();
    for r in reports {
        let row = rows.entry((r.task, r.n_seq)).or_default();
        row.eer.insert(r.method, r.eer_percent);
        row.frr.insert(r.method, r.frr_percent);
    }
    let mut out = String::from("task,n_seq,seconds");
    for (_, name) in TABLE_METHODS {
        out.push_str(&format!(",{name} EER"));
    }
    for (_, name) in TABLE_METHODS {
        out.push_str(&format!(",{name} FRR"));
    }
    out.push('\n');
    let cell = |v: Option<&f64>| v.map_or(String::new(), |x| format!("{x:.1}"));
    for ((task, n_seq), row) in &rows {
        out.push_str(&format!("{task},{n_seq},{}", 5 * n_seq));
        for (m, _) in TABLE_METHODS {
            out.push_str(&format!(",{}", cell(row.eer.get(&m))));
        }
        for (m, _) in TABLE_METHODS {
            out.push_str(&format!(",{}", cell(row.frr.get(&m))));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(task: Task, method: FusionMethod, n_seq: usize, eer: f64) -> EvalReport {
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION,
            task,
            method,
            n_seq,
            recipe: None,
            model_kind: None,
            seed: 0,
            k: 4,
            far_target: 1e-4,
            eer_percent: eer,
            eer_std: 0.0,
            frr_percent: 100.0,
            frr_reliable: false,
            pooled_eer_percent: eer,
            roc: Vec::new(),
            folds: Vec::new(),
            audit: FoldAudit {
                folds: 4,
                leaked_subjects: 0,
                test_pairs: vec![],
                train_pairs: vec![],
            },
            warnings: Vec::new(),
        }
    }

    #[test]
    fn table_layout() {
        let t = render_table(&[
            report(Task::Tex, FusionMethod::Baseline, 1, 14.64),
            report(Task::Tex, FusionMethod::Triple, 1, 11.36),
            report(Task::Ran, FusionMethod::Baseline, 8, 3.05),
        ]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("task,n_seq,seconds,EKYT EER,Tree EER"));
        assert_eq!(lines[1], "RAN,8,40,3.0,,,,,100.0,,,,");
        assert_eq!(lines[2], "TEX,1,5,14.6,,,,11.4,100.0,,,,100.0");
    }
}
