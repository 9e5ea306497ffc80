use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

use super::{LoadedConfig, PipelineError, Workflow};
use crate::backend::{Backend, ModelRequest, UserPart};
use crate::engine::{
    aggregate_item, generate_rule_variants, grade_cells, AggregateGrade, GradingMode, GradingSettings, SampleSet,
};
use crate::extract::{crop_regions, dissect_transcript, BoxLayout, DissectError, MarkerGrammar};
use crate::metrics::{evaluate, robustness_alpha, AlphaScale, EvalItem, EvaluationReport};
use crate::model::{
    ConfigError, ExamConfig, ExamSpec, PageImage, Points, Rubric, Submission, Transcript, TranscriptSource,
};
use crate::prompt::render_transcription_prompt;
use crate::store::{enqueue_reviews, Record, ReviewTask, RunStore};

const IMAGE_EXTENSIONS: [(&str, &str); 3] = [("png", "image/png"), ("jpg", "image/jpeg"), ("jpeg", "image/jpeg")];

/// Submissions from `<pages>/<student_id>/<page files>`; pages are taken in
/// file-name order and numbered from 1.
pub fn load_submissions(pages_dir: &Path) -> Result<Vec<Submission>, PipelineError> {
    let io = |e: std::io::Error| ConfigError::Io {
        path: pages_dir.display().to_string(),
        source: e,
    };
    let mut students: Vec<_> = std::fs::read_dir(pages_dir)
        .map_err(io)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .collect();
    students.sort_by_key(|e| e.file_name());
    let mut out = Vec::new();
    for entry in students {
        let student_id = entry.file_name().to_string_lossy().into_owned();
        let mut files: Vec<(std::path::PathBuf, &str)> = std::fs::read_dir(entry.path())
            .map_err(io)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let path = e.path();
                let ext = path.extension()?.to_str()?.to_ascii_lowercase();
                let media = IMAGE_EXTENSIONS.iter().find(|(x, _)| *x == ext)?.1;
                Some((path, media))
            })
            .collect();
        files.sort();
        let pages = files
            .into_iter()
            .enumerate()
            .map(|(i, (path, media))| {
                Ok(PageImage {
                    index: i + 1,
                    bytes: std::fs::read(&path).map_err(io)?,
                    media_type: media.to_string(),
                })
            })
            .collect::<Result<Vec<_>, PipelineError>>()?;
        if pages.is_empty() {
            tracing::warn!(%student_id, "no page images; skipping student");
            continue;
        }
        out.push(Submission {
            student_id,
            pages,
            ground_truth: None,
        });
    }
    if out.is_empty() {
        return Err(ConfigError::validation("pages", format!("no submissions under {}", pages_dir.display())).into());
    }
    Ok(out)
}

/// Non-fatal extraction problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractIssue {
    pub student_id: String,
    pub problem_id: String,
    pub variant_index: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExtractOutput {
    pub transcripts: Vec<Transcript>,
    pub issues: Vec<ExtractIssue>,
}

impl ExtractOutput {
    /// Per-problem share of empty and unrecognized transcripts.
    pub fn summary_table(&self, exam: &ExamSpec) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:>10}  {:>11}  {:>7}  {:>14}", "problem", "transcripts", "empty", "unrecognized");
        for p in &exam.problems {
            let of_p: Vec<&Transcript> = self.transcripts.iter().filter(|t| t.problem_id == p.problem_id).collect();
            let n = of_p.len().max(1) as f64;
            let empty = of_p.iter().filter(|t| t.empty).count();
            let unrecognized = self.issues.iter().filter(|i| i.problem_id == p.problem_id).count();
            let _ = writeln!(
                out,
                "{:>10}  {:>11}  {:>6.1}%  {:>13.1}%",
                p.problem_id,
                of_p.len(),
                100.0 * empty as f64 / n,
                100.0 * unrecognized as f64 / n
            );
        }
        out
    }
}

fn ocr_request(backend: &dyn Backend, image: &[u8], media_type: &str, question: Option<String>, temperature: f64) -> ModelRequest {
    let (system, _) = render_transcription_prompt(false, None).expect("plain transcription prompt");
    let mut user_parts = Vec::new();
    if let Some(q) = question {
        user_parts.push(UserPart::text(q));
    }
    user_parts.push(UserPart::image(image.to_vec(), media_type));
    ModelRequest {
        backend_name: backend.name().to_string(),
        system_prompt: system,
        user_parts,
        temperature,
        max_output: 4096,
        request_tag: "ocr".into(),
    }
}

/// Transcribe every submission with the configured workflow.
///
/// `variants` independent transcriptions are requested per page or region;
/// variant `v` uses sample index `v`.
pub async fn run_extraction(
    cfg: &LoadedConfig,
    submissions: &[Submission],
    backend: &dyn Backend,
    variants: usize,
) -> Result<ExtractOutput, PipelineError> {
    let exam = &cfg.exam.exam;
    let temperature = cfg.config.grading.plan.ocr_temperature;
    let concurrency = cfg.config.grading.concurrency.max(1);
    match cfg.config.workflow {
        Workflow::WholePage => {
            let grammar = cfg.grammar()?;
            let jobs = submissions.iter().flat_map(|s| {
                (0..variants).flat_map(move |v| s.pages.iter().map(move |page| (s, v, page)))
            });
            let texts: Vec<((String, usize, usize), String)> = stream::iter(jobs.map(|(s, v, page)| async move {
                let req = ocr_request(backend, &page.bytes, &page.media_type, None, temperature);
                let resp = backend.complete(&req, v as u64).await?;
                Ok::<_, PipelineError>(((s.student_id.clone(), v, page.index), resp.text))
            }))
            .buffered(concurrency)
            .try_collect()
            .await?;
            let mut pages: BTreeMap<(String, usize), Vec<(usize, String)>> = BTreeMap::new();
            for ((student, v, index), text) in texts {
                pages.entry((student, v)).or_default().push((index, text));
            }
            let mut out = ExtractOutput::default();
            for ((student_id, v), mut texts) in pages {
                texts.sort_by_key(|(i, _)| *i);
                let whole = texts.into_iter().map(|(_, t)| t).collect::<Vec<_>>().join("\n");
                dissect_into(&mut out, &whole, &grammar, exam, &student_id, v, backend.name(), temperature);
            }
            Ok(out)
        }
        Workflow::Box => {
            let layout = cfg.layout()?;
            box_extraction(cfg, submissions, backend, variants, &layout).await
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn dissect_into(
    out: &mut ExtractOutput,
    whole: &str,
    grammar: &MarkerGrammar,
    exam: &ExamSpec,
    student_id: &str,
    variant: usize,
    backend: &str,
    temperature: f64,
) {
    let dissection = dissect_transcript(whole, grammar, exam);
    for issue in &dissection.issues {
        let problem_id = match issue {
            DissectError::MissingMarker(p) | DissectError::DuplicateMarker(p) => p.clone(),
        };
        tracing::warn!(%student_id, variant, %issue, "dissection issue");
        out.issues.push(ExtractIssue {
            student_id: student_id.to_string(),
            problem_id,
            variant_index: variant,
            message: issue.to_string(),
        });
    }
    for p in &exam.problems {
        let text = dissection.answers.get(&p.problem_id).cloned().unwrap_or_default();
        out.transcripts.push(Transcript::new(
            student_id,
            &p.problem_id,
            text,
            TranscriptSource {
                backend: backend.to_string(),
                temperature,
                variant_index: variant,
                with_question_context: false,
            },
        ));
    }
}

async fn box_extraction(
    cfg: &LoadedConfig,
    submissions: &[Submission],
    backend: &dyn Backend,
    variants: usize,
    layout: &BoxLayout,
) -> Result<ExtractOutput, PipelineError> {
    let exam = &cfg.exam.exam;
    let temperature = cfg.config.grading.plan.ocr_temperature;
    let with_question = cfg.config.include_question_in_ocr;
    let mut jobs = Vec::new();
    for s in submissions {
        for page in &s.pages {
            if layout.for_page(page.index).next().is_none() {
                continue;
            }
            for region in crop_regions(page, layout)? {
                jobs.push((s.student_id.clone(), page.index, region));
            }
        }
    }
    let requests = jobs.iter().flat_map(|(student, page, region)| {
        (0..variants).map(move |v| (student, *page, region, v))
    });
    let texts: Vec<((String, String, usize, usize), String)> = stream::iter(requests.map(|(student, page, region, v)| async move {
        let question = match with_question {
            true => {
                let q = exam.problem(&region.problem_id).map(|p| p.question_text.as_str());
                render_transcription_prompt(true, q).map_err(|e| ConfigError::validation("include_question_in_ocr", e.to_string()))?.1
            }
            false => None,
        };
        let req = ocr_request(backend, &region.bytes, &region.media_type, question, temperature);
        let resp = backend.complete(&req, v as u64).await?;
        Ok::<_, PipelineError>(((student.clone(), region.problem_id.clone(), v, page), resp.text))
    }))
    .buffered(cfg.config.grading.concurrency.max(1))
    .try_collect()
    .await?;

    // Regions of one problem spread over several pages are joined in page order.
    let mut joined: BTreeMap<(String, String, usize), Vec<(usize, String)>> = BTreeMap::new();
    for ((student, problem, v, page), text) in texts {
        joined.entry((student, problem, v)).or_default().push((page, text));
    }
    let mut out = ExtractOutput::default();
    for s in submissions {
        for v in 0..variants {
            for p in &exam.problems {
                let key = (s.student_id.clone(), p.problem_id.clone(), v);
                let text = match joined.remove(&key) {
                    Some(mut parts) => {
                        parts.sort_by_key(|(page, _)| *page);
                        let live: Vec<String> = parts
                            .into_iter()
                            .map(|(_, t)| t)
                            .filter(|t| !crate::extract::detect_empty(t))
                            .collect();
                        live.join("\n")
                    }
                    None => {
                        out.issues.push(ExtractIssue {
                            student_id: s.student_id.clone(),
                            problem_id: p.problem_id.clone(),
                            variant_index: v,
                            message: "no layout region for this problem".into(),
                        });
                        String::new()
                    }
                };
                out.transcripts.push(Transcript::new(
                    &s.student_id,
                    &p.problem_id,
                    text,
                    TranscriptSource {
                        backend: backend.name().to_string(),
                        temperature,
                        variant_index: v,
                        with_question_context: with_question,
                    },
                ));
            }
        }
    }
    Ok(out)
}

pub fn write_transcripts(path: &Path, transcripts: &[Transcript]) -> Result<(), PipelineError> {
    let io = |e: std::io::Error| PipelineError::Output(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for t in transcripts {
        let line = serde_json::to_string(t).map_err(|e| PipelineError::Output(e.to_string()))?;
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_transcripts(path: &Path) -> Result<Vec<Transcript>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| ConfigError::Parse(format!("{} line {}: {e}", path.display(), i + 1)).into())
        })
        .collect()
}

/// One graded (student, problem).
#[derive(Debug, Clone)]
pub struct GradedItem {
    pub transcripts: Vec<Transcript>,
    pub samples: SampleSet,
    pub aggregate: AggregateGrade,
}

/// Grade every (student, problem) found in the transcripts, students in
/// sorted order and problems in exam order.
pub async fn grade_all(
    exam: &ExamConfig,
    transcripts: &[Transcript],
    settings: &GradingSettings,
    backend: &dyn Backend,
) -> Result<Vec<GradedItem>, PipelineError> {
    let mut by_item: BTreeMap<(String, String), Vec<Transcript>> = BTreeMap::new();
    for t in transcripts {
        if exam.exam.problem(&t.problem_id).is_none() {
            tracing::warn!(problem = %t.problem_id, "transcript for a problem not in the exam; ignored");
            continue;
        }
        by_item
            .entry((t.student_id.clone(), t.problem_id.clone()))
            .or_default()
            .push(t.clone());
    }
    let mut students: Vec<&String> = by_item.keys().map(|(s, _)| s).collect();
    students.dedup();
    let mut order = Vec::new();
    for s in students {
        for p in &exam.exam.problems {
            if let Some(mut ts) = by_item.get(&(s.clone(), p.problem_id.clone())).cloned() {
                ts.sort_by_key(|t| t.source.variant_index);
                order.push((p, ts));
            }
        }
    }
    let rubric_for = |problem_id: &str| -> Option<&Rubric> { exam.rubric(problem_id, settings.rubric_variant) };
    stream::iter(order.into_iter().map(|(problem, ts)| async move {
        let rubric = rubric_for(&problem.problem_id);
        if settings.mode == GradingMode::Rubric && rubric.is_none() {
            return Err(PipelineError::Config(ConfigError::validation(
                "rubrics",
                format!("no {:?} rubric for problem `{}`", settings.rubric_variant, problem.problem_id),
            )));
        }
        let samples = grade_cells(&ts, problem, rubric, settings, backend).await?;
        let aggregate = aggregate_item(&ts[0].student_id, problem, &samples, settings);
        Ok(GradedItem {
            transcripts: ts,
            samples,
            aggregate,
        })
    }))
    .buffered(4)
    .try_collect()
    .await
}

/// Persist a grading run and its review queue.
pub fn record_run(
    store: &RunStore,
    run_id: &str,
    cfg: &LoadedConfig,
    items: &[GradedItem],
) -> Result<Vec<ReviewTask>, PipelineError> {
    let mut w = store.create_run(
        run_id,
        &cfg.raw,
        &cfg.exam,
        cfg.config.review_unanswered,
        cfg.config.grading.rubric_variant,
    )?;
    for item in items {
        for t in &item.transcripts {
            w.append(&Record::Transcript(t.clone()))?;
        }
        for s in &item.samples.samples {
            w.append(&Record::Sample(s.clone()))?;
        }
        for d in &item.samples.dropped {
            w.append(&Record::Dropped(crate::store::DroppedRecord {
                student_id: item.aggregate.student_id.clone(),
                problem_id: item.aggregate.problem_id.clone(),
                cell: d.clone(),
            }))?;
        }
        w.append(&Record::Aggregate(item.aggregate.clone()))?;
    }
    let aggregates: Vec<AggregateGrade> = items.iter().map(|i| i.aggregate.clone()).collect();
    let tasks = enqueue_reviews(run_id, &aggregates, cfg.config.review_unanswered);
    for t in &tasks {
        w.append(&Record::Task(t.clone()))?;
    }
    w.finish()?;
    store.rebuild_index(run_id)?;
    Ok(tasks)
}

/// Counts of decisions per problem, as printed after grading.
pub fn decision_summary(items: &[GradedItem]) -> String {
    use crate::engine::Decision;
    let mut counts: BTreeMap<&str, [usize; 4]> = BTreeMap::new();
    let mut order = Vec::new();
    for i in items {
        let p = i.aggregate.problem_id.as_str();
        if !counts.contains_key(p) {
            order.push(p);
        }
        let c = counts.entry(p).or_default();
        match i.aggregate.decision {
            Some(Decision::CanDecide { .. }) => c[0] += 1,
            Some(Decision::CannotDecide { .. }) => c[1] += 1,
            Some(Decision::Unanswered) => c[2] += 1,
            None => c[3] += 1,
        }
    }
    let mut out = format!("{:>10}  {:>10}  {:>13}  {:>10}  {:>8}\n", "problem", "can-decide", "cannot-decide", "unanswered", "majority");
    for p in order {
        let c = counts[p];
        let _ = writeln!(out, "{p:>10}  {:>10}  {:>13}  {:>10}  {:>8}", c[0], c[1], c[2], c[3]);
    }
    out
}

/// Ground-truth file entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub student_id: String,
    pub problem_id: String,
    pub points: Points,
}

pub fn load_truth(path: &Path) -> Result<Vec<TruthEntry>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())).into())
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvaluationReport,
    /// Items left out, with the reason.
    pub skipped: Vec<String>,
}

/// Compare a stored run with ground truth and write the report files.
pub fn evaluate_run(
    store: &RunStore,
    run_id: &str,
    truth: &[TruthEntry],
    scale: AlphaScale,
) -> Result<Evaluation, PipelineError> {
    let data = store.load(run_id)?;
    let exam = data
        .exam
        .as_ref()
        .ok_or_else(|| PipelineError::Output(format!("run `{run_id}` has no exam record")))?;
    let truth_map: BTreeMap<(&str, &str), Points> = truth
        .iter()
        .map(|t| ((t.student_id.as_str(), t.problem_id.as_str()), t.points))
        .collect();
    let mut skipped = Vec::new();
    let mut items = Vec::new();
    for agg in &data.aggregates {
        let key = (agg.student_id.as_str(), agg.problem_id.as_str());
        let Some(&points) = truth_map.get(&key) else {
            tracing::warn!(student = key.0, problem = key.1, "no ground truth; item skipped");
            skipped.push(format!("{}/{}: no ground truth", key.0, key.1));
            continue;
        };
        let on_grid = exam
            .exam
            .problem(&agg.problem_id)
            .is_some_and(|p| p.assignable_points.contains(points));
        if !on_grid {
            tracing::warn!(student = key.0, problem = key.1, %points, "ground truth is not assignable; item skipped");
            skipped.push(format!("{}/{}: ground truth {points} is not assignable", key.0, key.1));
            continue;
        }
        items.push(EvalItem {
            aggregate: agg,
            truth: Some(points),
        });
    }
    if items.is_empty() {
        return Err(PipelineError::NoComparableItems);
    }
    let report = evaluate(&items, scale);
    store.write_report(run_id, &report)?;
    Ok(Evaluation { report, skipped })
}

/// Generate `k` paraphrases for every rule of the configured rubric
/// variant and return the updated exam configuration.
pub async fn generate_variants(
    exam: &ExamConfig,
    settings: &GradingSettings,
    backend: &dyn Backend,
    k: usize,
    temperature: f64,
) -> Result<ExamConfig, PipelineError> {
    let mut out = exam.clone();
    for rubric in out.rubrics.iter_mut().filter(|r| r.variant == settings.rubric_variant) {
        for rule in &mut rubric.rules {
            generate_rule_variants(rule, k, backend, temperature).await?;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Robustness {
    /// `grades[k][i]`: grade under paraphrase `k` for item `i`.
    pub grades: Vec<Vec<Points>>,
    pub items: Vec<(String, String)>,
    pub alpha: f64,
    pub scale: AlphaScale,
}

/// Grade every answered item once per rule paraphrase and measure how well
/// the paraphrased gradings agree with each other.
pub async fn paraphrase_robustness(
    exam: &ExamConfig,
    transcripts: &[Transcript],
    settings: &GradingSettings,
    backend: &dyn Backend,
    scale: AlphaScale,
) -> Result<Robustness, PipelineError> {
    let k = exam
        .rubrics
        .iter()
        .filter(|r| r.variant == settings.rubric_variant)
        .flat_map(|r| r.rules.iter().map(|rule| rule.paraphrases.len()))
        .min()
        .unwrap_or(0);
    if k < 2 {
        return Err(ConfigError::validation("paraphrases", "every rule needs at least two paraphrases").into());
    }
    let mut grades = Vec::with_capacity(k);
    let mut items: Option<Vec<(String, String)>> = None;
    for variant in 0..k {
        let mut s = settings.clone();
        s.mode = GradingMode::Rubric;
        s.paraphrase = Some(variant);
        let graded = grade_all(exam, transcripts, &s, backend).await?;
        let (keys, row): (Vec<_>, Vec<_>) = graded
            .iter()
            .filter_map(|g| {
                let grade = g.aggregate.machine_grade()?;
                Some(((g.aggregate.student_id.clone(), g.aggregate.problem_id.clone()), grade))
            })
            .unzip();
        match &items {
            None => items = Some(keys),
            Some(prev) if *prev != keys => {
                return Err(PipelineError::Output(
                    "paraphrase gradings produced different item sets".into(),
                ))
            }
            Some(_) => {}
        }
        grades.push(row);
    }
    let alpha = robustness_alpha(&grades, scale)?;
    Ok(Robustness {
        grades,
        items: items.unwrap_or_default(),
        alpha,
        scale,
    })
}
