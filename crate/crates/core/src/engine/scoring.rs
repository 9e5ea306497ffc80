use std::collections::BTreeMap;

use crate::model::{CombineMode, Points, Rubric};
use crate::prompt::{JudgementOutcome, Verdict};

/// Points from rule judgements, plus any rules that had no judgement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleScore {
    pub points: Points,
    pub missing: Vec<String>,
}

/// Convert per-rule judgements into a score.
///
/// Only `Yes` earns credit; `No`, `Unsure` and missing judgements earn
/// nothing. `Sum` adds all credited rules; `MaxOfGroups` sums within each
/// group (ungrouped rules share one implicit group) and keeps the best
/// group. The result is capped at the problem maximum.
pub fn score_rules(judgements: &BTreeMap<String, JudgementOutcome>, rubric: &Rubric) -> RuleScore {
    let mut missing = Vec::new();
    let mut groups: BTreeMap<Option<&str>, Points> = BTreeMap::new();
    for rule in &rubric.rules {
        let group = match rubric.combinator.mode {
            CombineMode::Sum => None,
            CombineMode::MaxOfGroups => rule.group.as_deref(),
        };
        let total = groups.entry(group).or_insert(Points::ZERO);
        match judgements.get(&rule.rule_id) {
            Some(j) if j.verdict == Verdict::Yes => *total = *total + rule.points,
            Some(_) => {}
            None => missing.push(rule.rule_id.clone()),
        }
    }
    let best = groups.into_values().max().unwrap_or(Points::ZERO);
    RuleScore {
        points: best.min(rubric.combinator.cap).max(Points::ZERO),
        missing,
    }
}
