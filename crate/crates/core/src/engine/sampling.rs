use std::collections::BTreeMap;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate_majority, aggregate_mean, sigma_decision, CannotDecideReason, Decision, MajorityVote};
use super::scoring::score_rules;
use super::EngineError;
use crate::backend::{Backend, BackendError, ModelRequest, UserPart};
use crate::model::{PointGrid, Points, ProblemSpec, Rubric, RubricVariant, Snap, Transcript};
use crate::prompt::{
    parse_judgement, parse_points, render_free_prompt, render_rule_prompt, JudgementFormat, JudgementOutcome,
};

/// Offset added to a cell's sample index when re-asking after an
/// unparseable reply, so the retry is a distinct request.
pub const RETRY_STRIDE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Majority,
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradingMode {
    #[default]
    Rubric,
    Free,
}

fn default_runs() -> usize {
    5
}

fn default_grading_temperature() -> f64 {
    0.7
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    #[serde(default = "default_one")]
    pub n_ocr_variants: usize,
    #[serde(default = "default_runs")]
    pub n_grading_runs: usize,
    #[serde(default = "default_grading_temperature")]
    pub grading_temperature: f64,
    #[serde(default = "default_grading_temperature")]
    pub ocr_temperature: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            n_ocr_variants: 1,
            n_grading_runs: default_runs(),
            grading_temperature: default_grading_temperature(),
            ocr_temperature: default_grading_temperature(),
            aggregation: Aggregation::Mean,
        }
    }
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.n_ocr_variants == 0 || self.n_grading_runs == 0 {
            return Err(EngineError::Config("sampling plan needs at least one variant and one run".into()));
        }
        for t in [self.grading_temperature, self.ocr_temperature] {
            if !t.is_finite() || t < 0.0 {
                return Err(EngineError::Config(format!("invalid temperature {t}")));
            }
        }
        if self.aggregation == Aggregation::Mean && self.n_ocr_variants * self.n_grading_runs < 2 {
            return Err(EngineError::Config(
                "mean aggregation needs at least two samples per answer".into(),
            ));
        }
        Ok(())
    }
}

fn default_drop_rate() -> f64 {
    0.2
}

fn default_concurrency() -> usize {
    16
}

fn default_max_output() -> u32 {
    512
}

/// Everything that shapes how one answer is graded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradingSettings {
    #[serde(default)]
    pub plan: SamplingPlan,
    #[serde(default)]
    pub mode: GradingMode,
    #[serde(default)]
    pub format: JudgementFormat,
    #[serde(default)]
    pub ignore_statement: bool,
    #[serde(default)]
    pub rubric_variant: RubricVariant,
    /// Grade with the k-th paraphrase of every rule instead of its text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paraphrase: Option<usize>,
    /// Fraction of dropped samples above which the answer goes to review.
    #[serde(default = "default_drop_rate")]
    pub max_drop_rate: f64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_max_output")]
    pub max_output: u32,
}

impl Default for GradingSettings {
    fn default() -> Self {
        GradingSettings {
            plan: SamplingPlan::default(),
            mode: GradingMode::Rubric,
            format: JudgementFormat::Verbalized,
            ignore_statement: false,
            rubric_variant: RubricVariant::Original,
            paraphrase: None,
            max_drop_rate: default_drop_rate(),
            concurrency: default_concurrency(),
            max_output: default_max_output(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleGrade {
    pub student_id: String,
    pub problem_id: String,
    pub ocr_variant: usize,
    pub run: usize,
    pub points: Points,
    pub mode: GradingMode,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub rule_judgements: BTreeMap<String, JudgementOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_rules: Vec<String>,
    /// Free-grading explanation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedCell {
    pub ocr_variant: usize,
    pub run: usize,
    pub reason: String,
}

/// Valid samples and dropped cells for one (student, problem).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleSet {
    pub samples: Vec<SampleGrade>,
    pub dropped: Vec<DroppedCell>,
    pub planned: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateGrade {
    pub student_id: String,
    pub problem_id: String,
    pub n_samples: usize,
    pub n_dropped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Grid value nearest the mean; the lower neighbour on an exact midpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapped: Option<Points>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub majority: Option<MajorityVote>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
}

impl AggregateGrade {
    pub fn is_unanswered(&self) -> bool {
        self.decision == Some(Decision::Unanswered)
    }

    /// The machine grade, ignoring confidence: the decided value, the
    /// majority vote, or the snapped mean.
    pub fn machine_grade(&self) -> Option<Points> {
        match self.decision {
            Some(Decision::Unanswered) => None,
            Some(Decision::CanDecide { value }) => Some(value),
            _ => self.majority.map(|m| m.value).or(self.snapped),
        }
    }

    /// Grade that stands without human review.
    pub fn automatic_grade(&self) -> Option<Points> {
        match self.decision {
            Some(Decision::CanDecide { value }) => Some(value),
            None => self.majority.map(|m| m.value),
            _ => None,
        }
    }
}

enum CellOutcome {
    Judgement(Result<JudgementOutcome, String>),
    Points(Result<(i64, String), String>),
}

struct CellRequest {
    cell: usize,
    variant: usize,
    run: usize,
    rule: Option<usize>,
    sample_index: u64,
    request: ModelRequest,
}

/// Grade one answer and require a usable sample set: mean aggregation
/// needs at least two valid samples.
pub async fn grade_answer(
    transcripts: &[Transcript],
    problem: &ProblemSpec,
    rubric: Option<&Rubric>,
    settings: &GradingSettings,
    backend: &dyn Backend,
) -> Result<SampleSet, EngineError> {
    let set = grade_cells(transcripts, problem, rubric, settings, backend).await?;
    if set.planned > 0 && settings.plan.aggregation == Aggregation::Mean && set.samples.len() < 2 {
        return Err(EngineError::DegenerateSampleSet {
            valid: set.samples.len(),
        });
    }
    Ok(set)
}

/// Issue every grading prompt for one answer and collect valid samples.
///
/// Each (OCR variant `v`, run `r`) cell uses sample index `v * runs + r`.
/// In rubric mode a cell is one prompt per rule; in free mode a single
/// prompt. A reply that does not parse is re-asked once; if it still fails
/// the whole cell is dropped. Empty transcripts yield an empty set.
pub async fn grade_cells(
    transcripts: &[Transcript],
    problem: &ProblemSpec,
    rubric: Option<&Rubric>,
    settings: &GradingSettings,
    backend: &dyn Backend,
) -> Result<SampleSet, EngineError> {
    let answered: Vec<&Transcript> = transcripts.iter().filter(|t| !t.empty).collect();
    if answered.is_empty() {
        return Ok(SampleSet::default());
    }
    let (student_id, problem_id) = (answered[0].student_id.clone(), answered[0].problem_id.clone());
    let runs = settings.plan.n_grading_runs;

    let rubric = match settings.mode {
        GradingMode::Rubric => Some(rubric.ok_or_else(|| {
            EngineError::Config(format!("no {:?} rubric for problem `{problem_id}`", settings.rubric_variant))
        })?),
        GradingMode::Free => None,
    };
    let free_max = match settings.mode {
        GradingMode::Free => Some(problem.max_points.as_integer().ok_or_else(|| {
            EngineError::Config(format!("free grading needs an integer max_points for `{problem_id}`"))
        })?),
        GradingMode::Rubric => None,
    };

    let mut requests = Vec::new();
    for (cell_pos, (t, run)) in answered
        .iter()
        .flat_map(|t| (0..runs).map(move |r| (*t, r)))
        .enumerate()
    {
        let variant = t.source.variant_index;
        let sample_index = (variant * runs + run) as u64;
        let make = |system: String, user: String| ModelRequest {
            backend_name: backend.name().to_string(),
            system_prompt: system,
            user_parts: vec![UserPart::text(user)],
            temperature: settings.plan.grading_temperature,
            max_output: settings.max_output,
            request_tag: "grade".into(),
        };
        match (rubric, free_max) {
            (Some(rubric), _) => {
                for (ri, rule) in rubric.rules.iter().enumerate() {
                    let p = render_rule_prompt(
                        rule.wording(settings.paraphrase),
                        &t.text,
                        settings.format,
                        settings.ignore_statement,
                    );
                    requests.push(CellRequest {
                        cell: cell_pos,
                        variant,
                        run,
                        rule: Some(ri),
                        sample_index,
                        request: make(p.system, p.user),
                    });
                }
            }
            (None, Some(max)) => {
                let p = render_free_prompt(&problem.question_text, max, &t.text)
                    .map_err(|e| EngineError::Config(e.to_string()))?;
                requests.push(CellRequest {
                    cell: cell_pos,
                    variant,
                    run,
                    rule: None,
                    sample_index,
                    request: make(p.system, p.user),
                });
            }
            (None, None) => unreachable!("grading mode resolved above"),
        }
    }

    let format = settings.format;
    let ask = |req: CellRequest| async move {
        let mut last_error = String::new();
        for attempt in 0..2u64 {
            let index = req.sample_index + attempt * RETRY_STRIDE;
            let reply = backend.complete(&req.request, index).await?;
            let outcome = match req.rule {
                Some(_) => match parse_judgement(&reply.text, format) {
                    Ok(j) => CellOutcome::Judgement(Ok(j)),
                    Err(e) => CellOutcome::Judgement(Err(e.to_string())),
                },
                None => match parse_points(&reply.text) {
                    Ok(p) if Some(p.points) <= free_max => CellOutcome::Points(Ok((p.points, p.explanation))),
                    Ok(p) => CellOutcome::Points(Err(format!("{} points exceeds the maximum", p.points))),
                    Err(e) => CellOutcome::Points(Err(e.to_string())),
                },
            };
            match &outcome {
                CellOutcome::Judgement(Err(e)) | CellOutcome::Points(Err(e)) => {
                    tracing::debug!(cell = req.cell, attempt, error = %e, "unparseable reply");
                    last_error = e.clone();
                }
                _ => return Ok::<_, BackendError>((req.cell, req.variant, req.run, req.rule, outcome)),
            }
        }
        let failed = match req.rule {
            Some(_) => CellOutcome::Judgement(Err(last_error)),
            None => CellOutcome::Points(Err(last_error)),
        };
        Ok((req.cell, req.variant, req.run, req.rule, failed))
    };

    let mut results: Vec<_> = stream::iter(requests.into_iter().map(ask))
        .buffer_unordered(settings.concurrency.max(1))
        .collect()
        .await;
    results.sort_by_key(|r| match r {
        Ok((cell, _, _, rule, _)) => (*cell, *rule),
        Err(_) => (usize::MAX, None),
    });

    struct Cell {
        variant: usize,
        run: usize,
        judgements: BTreeMap<String, JudgementOutcome>,
        points: Option<(i64, String)>,
        error: Option<String>,
    }
    let mut cells: BTreeMap<usize, Cell> = BTreeMap::new();
    for r in results {
        let (cell, variant, run, rule, outcome) = r.map_err(|source| EngineError::Backend {
            student_id: student_id.clone(),
            problem_id: problem_id.clone(),
            cell: None,
            source,
        })?;
        let entry = cells.entry(cell).or_insert(Cell {
            variant,
            run,
            judgements: BTreeMap::new(),
            points: None,
            error: None,
        });
        match outcome {
            CellOutcome::Judgement(Ok(j)) => {
                let rule_id = rubric.expect("rubric mode").rules[rule.expect("rule cell")].rule_id.clone();
                entry.judgements.insert(rule_id, j);
            }
            CellOutcome::Points(Ok(p)) => entry.points = Some(p),
            CellOutcome::Judgement(Err(e)) | CellOutcome::Points(Err(e)) => {
                entry.error.get_or_insert(e);
            }
        }
    }

    let planned = cells.len();
    let mut set = SampleSet {
        planned,
        ..SampleSet::default()
    };
    for cell in cells.into_values() {
        if let Some(reason) = cell.error {
            tracing::warn!(%student_id, %problem_id, variant = cell.variant, run = cell.run, %reason, "dropping sample");
            set.dropped.push(DroppedCell {
                ocr_variant: cell.variant,
                run: cell.run,
                reason,
            });
            continue;
        }
        let sample = match (rubric, cell.points) {
            (Some(rubric), _) => {
                let score = score_rules(&cell.judgements, rubric);
                SampleGrade {
                    student_id: student_id.clone(),
                    problem_id: problem_id.clone(),
                    ocr_variant: cell.variant,
                    run: cell.run,
                    points: score.points,
                    mode: GradingMode::Rubric,
                    rule_judgements: cell.judgements,
                    missing_rules: score.missing,
                    explanation: None,
                }
            }
            (None, Some((points, explanation))) => SampleGrade {
                student_id: student_id.clone(),
                problem_id: problem_id.clone(),
                ocr_variant: cell.variant,
                run: cell.run,
                points: Points::from_integer(points),
                mode: GradingMode::Free,
                rule_judgements: BTreeMap::new(),
                missing_rules: Vec::new(),
                explanation: Some(explanation),
            },
            (None, None) => unreachable!("free cell without points or error"),
        };
        set.samples.push(sample);
    }

    Ok(set)
}

fn snap_down(grid: &PointGrid, value: Points) -> Points {
    match grid.snap(value) {
        Snap::Value(v) | Snap::Tie(v, _) => v,
    }
}

/// Aggregate one answer's samples under the plan.
pub fn aggregate_item(
    student_id: &str,
    problem: &ProblemSpec,
    set: &SampleSet,
    settings: &GradingSettings,
) -> AggregateGrade {
    let mut agg = AggregateGrade {
        student_id: student_id.to_string(),
        problem_id: problem.problem_id.clone(),
        n_samples: set.samples.len(),
        n_dropped: set.dropped.len(),
        mean: None,
        sigma: None,
        snapped: None,
        majority: None,
        decision: None,
    };
    if set.planned == 0 {
        agg.decision = Some(Decision::Unanswered);
        return agg;
    }
    let grid = &problem.assignable_points;
    let points: Vec<Points> = set.samples.iter().map(|s| s.points).collect();
    let drop_rate = set.dropped.len() as f64 / set.planned as f64;
    let too_many_drops = drop_rate > settings.max_drop_rate;

    match settings.plan.aggregation {
        Aggregation::Majority => {
            agg.majority = aggregate_majority(&points).map(|vote| {
                // Off-grid rubric sums are pulled onto the grid; a midpoint
                // resolves downward and is reported as a tie.
                match grid.snap(vote.value) {
                    Snap::Value(v) => MajorityVote { value: v, tie: vote.tie },
                    Snap::Tie(lo, _) => MajorityVote { value: lo, tie: true },
                }
            });
            if too_many_drops || agg.majority.is_none() {
                agg.decision = Some(Decision::CannotDecide {
                    reason: CannotDecideReason::ParseDrops,
                });
            }
        }
        Aggregation::Mean => {
            if let Ok(spread) = aggregate_mean(&points) {
                agg.mean = Some(spread.mean_f64());
                agg.sigma = Some(spread.sigma_f64());
                agg.snapped = Some(snap_down(grid, spread.mean));
                agg.decision = Some(sigma_decision(spread.mean, spread.variance, grid));
            } else if let [only] = points.as_slice() {
                agg.mean = Some(only.to_f64());
                agg.snapped = Some(snap_down(grid, *only));
            }
            if too_many_drops || points.len() < 2 {
                agg.decision = Some(Decision::CannotDecide {
                    reason: CannotDecideReason::ParseDrops,
                });
            }
        }
    }
    agg
}
