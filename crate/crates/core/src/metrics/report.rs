use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    accuracy, build_contingency, contingency_metrics, krippendorff_alpha, AlphaScale, ContingencyItem,
    ContingencyMetrics, ContingencyTable, GradePairSeries,
};
use crate::engine::{AggregateGrade, Decision};
use crate::model::Points;

/// One graded (student, problem) with its ground truth, if known.
#[derive(Debug, Clone)]
pub struct EvalItem<'a> {
    pub aggregate: &'a AggregateGrade,
    pub truth: Option<Points>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemReport {
    pub problem_id: String,
    /// Items with a machine grade and a ground truth.
    pub n_graded: usize,
    pub n_unanswered: usize,
    pub n_without_truth: usize,
    pub accuracy: Option<f64>,
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contingency: Option<ContingencyTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<ContingencyMetrics>,
    pub confidence_positive_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub alpha_scale: AlphaScale,
    pub problems: Vec<ProblemReport>,
    pub overall: ProblemReport,
}

fn summarize(problem_id: &str, items: &[&EvalItem<'_>], scale: AlphaScale) -> ProblemReport {
    let mut pairs = Vec::new();
    let mut confidence_items = Vec::new();
    let (mut n_unanswered, mut n_without_truth) = (0, 0);
    for item in items {
        let agg = item.aggregate;
        if agg.is_unanswered() {
            n_unanswered += 1;
            continue;
        }
        let (Some(truth), Some(predicted)) = (item.truth, agg.machine_grade()) else {
            n_without_truth += 1;
            continue;
        };
        pairs.push((predicted, truth));
        if let (Some(decision @ (Decision::CanDecide { .. } | Decision::CannotDecide { .. })), Some(snapped)) =
            (agg.decision, agg.snapped.or(agg.majority.map(|m| m.value)))
        {
            confidence_items.push(ContingencyItem {
                decision,
                snapped,
                truth,
            });
        }
    }
    let series = GradePairSeries::new(pairs, scale);
    let (alpha, alpha_note) = match krippendorff_alpha(&series) {
        Ok(a) => (Some(a), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let contingency = (!confidence_items.is_empty()).then(|| build_contingency(&confidence_items));
    ProblemReport {
        problem_id: problem_id.to_string(),
        n_graded: series.pairs.len(),
        n_unanswered,
        n_without_truth,
        accuracy: accuracy(&series).ok(),
        alpha,
        alpha_note,
        confidence: contingency.as_ref().map(contingency_metrics),
        confidence_positive_rate: contingency.as_ref().and_then(ContingencyTable::positive_rate),
        contingency,
    }
}

/// Per-problem and overall agreement and confidence statistics.
/// Unanswered items are counted but never enter any rate.
pub fn evaluate(items: &[EvalItem<'_>], scale: AlphaScale) -> EvaluationReport {
    let mut by_problem: BTreeMap<&str, Vec<&EvalItem<'_>>> = BTreeMap::new();
    for item in items {
        by_problem.entry(item.aggregate.problem_id.as_str()).or_default().push(item);
    }
    let problems = by_problem
        .iter()
        .map(|(id, items)| summarize(id, items, scale))
        .collect();
    let all: Vec<&EvalItem<'_>> = items.iter().collect();
    EvaluationReport {
        alpha_scale: scale,
        problems,
        overall: summarize("all", &all, scale),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.0}%", v * 100.0))
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table, one row per problem plus an overall row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "alpha scale: {}", self.alpha_scale);
        let header = [
            "problem", "graded", "unans", "acc", "alpha", "c-acc", "prec", "rec", "f1", "fp-rate", "positive",
        ];
        let rows: Vec<[String; 11]> = self
            .problems
            .iter()
            .chain(std::iter::once(&self.overall))
            .map(|r| {
                let c = r.confidence;
                [
                    r.problem_id.clone(),
                    r.n_graded.to_string(),
                    r.n_unanswered.to_string(),
                    cell(r.accuracy),
                    cell(r.alpha),
                    cell(c.and_then(|c| c.accuracy)),
                    cell(c.and_then(|c| c.precision)),
                    cell(c.and_then(|c| c.recall)),
                    cell(c.and_then(|c| c.f1)),
                    cell(c.and_then(|c| c.fp_rate)),
                    pct(r.confidence_positive_rate),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[&str]| {
            let mut s = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ");
            s.push('\n');
            s
        };
        out.push_str(&line(&header));
        for row in &rows {
            let cells: Vec<&str> = row.iter().map(String::as_str).collect();
            out.push_str(&line(&cells));
        }
        out
    }
}
