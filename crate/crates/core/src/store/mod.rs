//! Append-only run records and the human review queue.
//!
//! Layout per run:
//!
//! ```text
//! <runs>/<run_id>/config.snapshot   run configuration as given
//! <runs>/<run_id>/records.log       one JSON object per line: kind, payload, crc
//! <runs>/<run_id>/index             derived summary, rebuilt from the log
//! <runs>/<run_id>/records.lock      present while a writer is active
//! ```

mod log;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use log::{encode_line, read_lines, LoadIssue, LogWriter, RawRecord};

use crate::engine::{AggregateGrade, CannotDecideReason, Decision, DroppedCell, SampleGrade};
use crate::metrics::EvaluationReport;
use crate::model::{ExamConfig, GradingRule, Points, RubricVariant, Transcript};

pub const SNAPSHOT: &str = "config.snapshot";
pub const LOG: &str = "records.log";
pub const LOCK: &str = "records.lock";
pub const INDEX: &str = "index";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode record: {0}")]
    Encode(String),
    #[error("record on line {line} is malformed: {message}")]
    Decode { line: usize, message: String },
    #[error("run is locked by another writer ({0}); remove the lock file if no writer is running")]
    Locked(PathBuf),
    #[error("unknown run `{0}`")]
    UnknownRun(String),
    #[error("run `{0}` already exists")]
    RunExists(String),
    #[error("invalid run id `{0}`")]
    InvalidRunId(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("task `{0}` is already resolved")]
    AlreadyResolved(String),
    #[error("{points} is not an assignable value for problem `{problem_id}`")]
    InvalidPoints { problem_id: String, points: Points },
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewReason {
    CannotDecide,
    ParseDropExceeded,
    UnansweredFlagged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub task_id: String,
    pub final_points: Points,
    pub reviewer: String,
    #[serde(default)]
    pub note: String,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Resolved {
        final_points: Points,
        reviewer: String,
        note: String,
        timestamp: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub task_id: String,
    pub run_id: String,
    pub student_id: String,
    pub problem_id: String,
    pub reason: ReviewReason,
    pub status: TaskStatus,
}

impl ReviewTask {
    pub fn is_open(&self) -> bool {
        self.status == TaskStatus::Open
    }
}

/// Stable short id for the review task of one (run, student, problem).
pub fn task_id(run_id: &str, student_id: &str, problem_id: &str) -> String {
    let mut h = Sha256::new();
    for part in [run_id, student_id, problem_id] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// One open task per aggregate that needs a human.
pub fn enqueue_reviews(run_id: &str, aggregates: &[AggregateGrade], review_unanswered: bool) -> Vec<ReviewTask> {
    aggregates
        .iter()
        .filter_map(|a| {
            let reason = match a.decision? {
                Decision::CannotDecide {
                    reason: CannotDecideReason::ParseDrops,
                } => ReviewReason::ParseDropExceeded,
                Decision::CannotDecide { .. } => ReviewReason::CannotDecide,
                Decision::Unanswered if review_unanswered => ReviewReason::UnansweredFlagged,
                _ => return None,
            };
            Some(ReviewTask {
                task_id: task_id(run_id, &a.student_id, &a.problem_id),
                run_id: run_id.to_string(),
                student_id: a.student_id.clone(),
                problem_id: a.problem_id.clone(),
                reason,
                status: TaskStatus::Open,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub created_at: u64,
    #[serde(default)]
    pub review_unanswered: bool,
    #[serde(default)]
    pub rubric_variant: RubricVariant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedRecord {
    pub student_id: String,
    pub problem_id: String,
    #[serde(flatten)]
    pub cell: DroppedCell,
}

/// Every record kind in a run log.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    Meta(RunMeta),
    Exam(ExamConfig),
    Transcript(Transcript),
    Sample(SampleGrade),
    Dropped(DroppedRecord),
    Aggregate(AggregateGrade),
    Task(ReviewTask),
    Resolution(Resolution),
}

impl Record {
    fn kind(&self) -> &'static str {
        match self {
            Record::Meta(_) => "meta",
            Record::Exam(_) => "exam",
            Record::Transcript(_) => "transcript",
            Record::Sample(_) => "sample",
            Record::Dropped(_) => "dropped",
            Record::Aggregate(_) => "aggregate",
            Record::Task(_) => "task",
            Record::Resolution(_) => "resolution",
        }
    }

    fn append_to(&self, w: &mut LogWriter) -> Result<(), StoreError> {
        let kind = self.kind();
        match self {
            Record::Meta(v) => w.append(kind, v),
            Record::Exam(v) => w.append(kind, v),
            Record::Transcript(v) => w.append(kind, v),
            Record::Sample(v) => w.append(kind, v),
            Record::Dropped(v) => w.append(kind, v),
            Record::Aggregate(v) => w.append(kind, v),
            Record::Task(v) => w.append(kind, v),
            Record::Resolution(v) => w.append(kind, v),
        }
    }

    fn decode(raw: &RawRecord) -> Result<Option<Record>, StoreError> {
        fn de<T: serde::de::DeserializeOwned>(raw: &RawRecord) -> Result<T, StoreError> {
            serde_json::from_str(&raw.payload).map_err(|e| StoreError::Decode {
                line: raw.line,
                message: e.to_string(),
            })
        }
        Ok(Some(match raw.kind.as_str() {
            "meta" => Record::Meta(de(raw)?),
            "exam" => Record::Exam(de(raw)?),
            "transcript" => Record::Transcript(de(raw)?),
            "sample" => Record::Sample(de(raw)?),
            "dropped" => Record::Dropped(de(raw)?),
            "aggregate" => Record::Aggregate(de(raw)?),
            "task" => Record::Task(de(raw)?),
            "resolution" => Record::Resolution(de(raw)?),
            _ => return Ok(None),
        }))
    }
}

/// Source of timestamps; fixed in tests so records are reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    Fixed(u64),
}

impl Clock {
    pub fn now(self) -> u64 {
        match self {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            Clock::Fixed(t) => t,
        }
    }
}

/// Final grade state of one (student, problem).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FinalGrade {
    Resolved { points: Points },
    Automatic { points: Points },
    Pending,
    Unanswered,
}

impl FinalGrade {
    pub fn points(self) -> Option<Points> {
        match self {
            FinalGrade::Resolved { points } | FinalGrade::Automatic { points } => Some(points),
            FinalGrade::Pending | FinalGrade::Unanswered => None,
        }
    }
}

/// A fully loaded run.
#[derive(Debug, Clone, Default)]
pub struct RunData {
    pub meta: Option<RunMeta>,
    pub exam: Option<ExamConfig>,
    pub config_snapshot: String,
    pub transcripts: Vec<Transcript>,
    pub samples: Vec<SampleGrade>,
    pub dropped: Vec<DroppedRecord>,
    pub aggregates: Vec<AggregateGrade>,
    /// Tasks with resolutions applied, in enqueue order.
    pub tasks: Vec<ReviewTask>,
    pub resolutions: Vec<Resolution>,
    pub issues: Vec<LoadIssue>,
}

/// Everything a reviewer needs to decide one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDetail {
    pub task: ReviewTask,
    pub question: Option<String>,
    pub max_points: Option<Points>,
    pub assignable_points: Vec<Points>,
    pub transcripts: Vec<Transcript>,
    pub samples: Vec<SampleGrade>,
    pub dropped: Vec<DroppedCell>,
    pub aggregate: Option<AggregateGrade>,
    pub rules: Vec<GradingRule>,
    pub final_grade: FinalGrade,
}

impl RunData {
    pub fn run_id(&self) -> &str {
        self.meta.as_ref().map_or("", |m| m.run_id.as_str())
    }

    pub fn task(&self, task_id: &str) -> Option<&ReviewTask> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    pub fn open_tasks(&self) -> impl Iterator<Item = &ReviewTask> {
        self.tasks.iter().filter(|t| t.is_open())
    }

    pub fn aggregate(&self, student_id: &str, problem_id: &str) -> Option<&AggregateGrade> {
        self.aggregates
            .iter()
            .find(|a| a.student_id == student_id && a.problem_id == problem_id)
    }

    /// Resolution if present, else the automatic grade, else pending.
    pub fn final_grade(&self, aggregate: &AggregateGrade) -> FinalGrade {
        let resolved = self.tasks.iter().find_map(|t| match &t.status {
            TaskStatus::Resolved { final_points, .. }
                if t.student_id == aggregate.student_id && t.problem_id == aggregate.problem_id =>
            {
                Some(*final_points)
            }
            _ => None,
        });
        match (resolved, aggregate.automatic_grade()) {
            (Some(points), _) => FinalGrade::Resolved { points },
            (None, Some(points)) => FinalGrade::Automatic { points },
            (None, None) if aggregate.is_unanswered() => FinalGrade::Unanswered,
            (None, None) => FinalGrade::Pending,
        }
    }

    pub fn final_grades(&self) -> BTreeMap<(String, String), FinalGrade> {
        self.aggregates
            .iter()
            .map(|a| ((a.student_id.clone(), a.problem_id.clone()), self.final_grade(a)))
            .collect()
    }

    pub fn task_detail(&self, task_id: &str) -> Option<TaskDetail> {
        let task = self.task(task_id)?.clone();
        let matches = |s: &str, p: &str| s == task.student_id && p == task.problem_id;
        let problem = self.exam.as_ref().and_then(|e| e.exam.problem(&task.problem_id));
        let variant = self.meta.as_ref().map(|m| m.rubric_variant).unwrap_or_default();
        let rules = self
            .exam
            .as_ref()
            .and_then(|e| e.rubric(&task.problem_id, variant))
            .map(|r| r.rules.clone())
            .unwrap_or_default();
        let aggregate = self.aggregate(&task.student_id, &task.problem_id).cloned();
        let final_grade = aggregate.as_ref().map_or(FinalGrade::Pending, |a| self.final_grade(a));
        Some(TaskDetail {
            question: problem.map(|p| p.question_text.clone()),
            max_points: problem.map(|p| p.max_points),
            assignable_points: problem.map(|p| p.assignable_points.values().to_vec()).unwrap_or_default(),
            transcripts: self
                .transcripts
                .iter()
                .filter(|t| matches(&t.student_id, &t.problem_id))
                .cloned()
                .collect(),
            samples: self
                .samples
                .iter()
                .filter(|s| matches(&s.student_id, &s.problem_id))
                .cloned()
                .collect(),
            dropped: self
                .dropped
                .iter()
                .filter(|d| matches(&d.student_id, &d.problem_id))
                .map(|d| d.cell.clone())
                .collect(),
            aggregate,
            rules,
            final_grade,
            task,
        })
    }

    fn apply(&mut self, record: Record, line: usize) {
        match record {
            Record::Meta(m) => self.meta = Some(m),
            Record::Exam(e) => self.exam = Some(e),
            Record::Transcript(t) => self.transcripts.push(t),
            Record::Sample(s) => self.samples.push(s),
            Record::Dropped(d) => self.dropped.push(d),
            Record::Aggregate(a) => self.aggregates.push(a),
            Record::Task(t) => {
                if self.task(&t.task_id).is_none() {
                    self.tasks.push(t);
                }
            }
            Record::Resolution(r) => {
                let Some(task) = self.tasks.iter_mut().find(|t| t.task_id == r.task_id) else {
                    self.issues.push(LoadIssue {
                        line,
                        message: format!("resolution for unknown task `{}`", r.task_id),
                    });
                    return;
                };
                if task.is_open() {
                    task.status = TaskStatus::Resolved {
                        final_points: r.final_points,
                        reviewer: r.reviewer.clone(),
                        note: r.note.clone(),
                        timestamp: r.timestamp,
                    };
                }
                self.resolutions.push(r);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub created_at: Option<u64>,
    pub n_aggregates: usize,
    pub n_tasks: usize,
    pub n_open: usize,
    pub has_report: bool,
}

/// Root directory holding one subdirectory per run.
#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
    clock: Clock,
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        RunStore {
            root: root.into(),
            clock: Clock::System,
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_dir(&self, run_id: &str) -> Result<PathBuf, StoreError> {
        if !valid_run_id(run_id) {
            return Err(StoreError::InvalidRunId(run_id.to_string()));
        }
        Ok(self.root.join(run_id))
    }

    fn existing_run_dir(&self, run_id: &str) -> Result<PathBuf, StoreError> {
        let dir = self.run_dir(run_id)?;
        if !dir.join(LOG).is_file() {
            return Err(StoreError::UnknownRun(run_id.to_string()));
        }
        Ok(dir)
    }

    /// Start a new run. Fails if the run already has a log.
    pub fn create_run(
        &self,
        run_id: &str,
        config_snapshot: &str,
        exam: &ExamConfig,
        review_unanswered: bool,
        rubric_variant: RubricVariant,
    ) -> Result<RunWriter, StoreError> {
        let dir = self.run_dir(run_id)?;
        if dir.join(LOG).exists() {
            return Err(StoreError::RunExists(run_id.to_string()));
        }
        std::fs::create_dir_all(&dir).map_err(|e| StoreError::io(&dir, e))?;
        let snapshot = dir.join(SNAPSHOT);
        std::fs::write(&snapshot, config_snapshot).map_err(|e| StoreError::io(&snapshot, e))?;
        let mut writer = RunWriter {
            log: LogWriter::open(&dir.join(LOG), &dir.join(LOCK))?,
            dir,
        };
        writer.append(&Record::Meta(RunMeta {
            run_id: run_id.to_string(),
            created_at: self.clock.now(),
            review_unanswered,
            rubric_variant,
        }))?;
        writer.append(&Record::Exam(exam.clone()))?;
        Ok(writer)
    }

    /// Exclusive writer for an existing run.
    pub fn writer(&self, run_id: &str) -> Result<RunWriter, StoreError> {
        let dir = self.existing_run_dir(run_id)?;
        Ok(RunWriter {
            log: LogWriter::open(&dir.join(LOG), &dir.join(LOCK))?,
            dir,
        })
    }

    pub fn load(&self, run_id: &str) -> Result<RunData, StoreError> {
        let dir = self.existing_run_dir(run_id)?;
        let (raw, issues) = read_lines(&dir.join(LOG))?;
        let mut data = RunData {
            issues,
            config_snapshot: std::fs::read_to_string(dir.join(SNAPSHOT)).unwrap_or_default(),
            ..RunData::default()
        };
        for r in &raw {
            match Record::decode(r) {
                Ok(Some(record)) => data.apply(record, r.line),
                Ok(None) => data.issues.push(LoadIssue {
                    line: r.line,
                    message: format!("unknown record kind `{}`", r.kind),
                }),
                Err(e) => {
                    tracing::warn!(run = run_id, error = %e, "skipping record");
                    data.issues.push(LoadIssue {
                        line: r.line,
                        message: e.to_string(),
                    });
                }
            }
        }
        Ok(data)
    }

    pub fn list_runs(&self) -> Result<Vec<RunSummary>, StoreError> {
        let entries = match std::fs::read_dir(&self.root) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(StoreError::io(&self.root, e)),
        };
        let mut ids: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join(LOG).is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| valid_run_id(id))
            .collect();
        ids.sort();
        ids.iter()
            .map(|id| {
                let data = self.load(id)?;
                Ok(RunSummary {
                    run_id: id.clone(),
                    created_at: data.meta.as_ref().map(|m| m.created_at),
                    n_aggregates: data.aggregates.len(),
                    n_tasks: data.tasks.len(),
                    n_open: data.open_tasks().count(),
                    has_report: self.root.join(id).join(REPORT_JSON).is_file(),
                })
            })
            .collect()
    }

    /// Record a reviewer's grade for an open task.
    pub fn resolve_review(
        &self,
        run_id: &str,
        task_id: &str,
        final_points: Points,
        reviewer: &str,
        note: &str,
    ) -> Result<ReviewTask, StoreError> {
        let mut writer = self.writer(run_id)?;
        let data = self.load(run_id)?;
        let task = data
            .task(task_id)
            .ok_or_else(|| StoreError::UnknownTask(task_id.to_string()))?;
        if !task.is_open() {
            return Err(StoreError::AlreadyResolved(task_id.to_string()));
        }
        let on_grid = data
            .exam
            .as_ref()
            .and_then(|e| e.exam.problem(&task.problem_id))
            .is_some_and(|p| p.assignable_points.contains(final_points));
        if !on_grid {
            return Err(StoreError::InvalidPoints {
                problem_id: task.problem_id.clone(),
                points: final_points,
            });
        }
        let resolution = Resolution {
            task_id: task_id.to_string(),
            final_points,
            reviewer: reviewer.to_string(),
            note: note.to_string(),
            timestamp: self.clock.now(),
        };
        writer.append(&Record::Resolution(resolution.clone()))?;
        writer.log.sync()?;
        let mut resolved = task.clone();
        resolved.status = TaskStatus::Resolved {
            final_points,
            reviewer: resolution.reviewer,
            note: resolution.note,
            timestamp: resolution.timestamp,
        };
        drop(writer);
        self.rebuild_index(run_id)?;
        Ok(resolved)
    }

    /// Regenerate the derived index from the log.
    pub fn rebuild_index(&self, run_id: &str) -> Result<(), StoreError> {
        let dir = self.existing_run_dir(run_id)?;
        let data = self.load(run_id)?;
        let mut out = String::new();
        out.push_str(&format!(
            "run {}\ntranscripts {}\nsamples {}\ndropped {}\naggregates {}\ntasks {}\nopen {}\nissues {}\n",
            run_id,
            data.transcripts.len(),
            data.samples.len(),
            data.dropped.len(),
            data.aggregates.len(),
            data.tasks.len(),
            data.open_tasks().count(),
            data.issues.len(),
        ));
        for t in &data.tasks {
            let state = match &t.status {
                TaskStatus::Open => "open".to_string(),
                TaskStatus::Resolved { final_points, .. } => format!("resolved {final_points}"),
            };
            out.push_str(&format!(
                "task {} {} {} {}\n",
                t.task_id, t.student_id, t.problem_id, state
            ));
        }
        let path = dir.join(INDEX);
        std::fs::write(&path, out).map_err(|e| StoreError::io(&path, e))
    }

    pub fn write_report(&self, run_id: &str, report: &EvaluationReport) -> Result<(), StoreError> {
        let dir = self.existing_run_dir(run_id)?;
        for (name, body) in [(REPORT_JSON, report.to_json()), (REPORT_TEXT, report.to_table())] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| StoreError::io(&path, e))?;
        }
        Ok(())
    }

    pub fn read_report(&self, run_id: &str) -> Result<Option<EvaluationReport>, StoreError> {
        let path = self.existing_run_dir(run_id)?.join(REPORT_JSON);
        match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).map(Some).map_err(|e| StoreError::Decode {
                line: 0,
                message: format!("{}: {e}", path.display()),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(StoreError::io(&path, e)),
        }
    }
}

/// Single writer for one run; the lock is released on drop.
#[derive(Debug)]
pub struct RunWriter {
    log: LogWriter,
    dir: PathBuf,
}

impl RunWriter {
    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&mut self, record: &Record) -> Result<(), StoreError> {
        record.append_to(&mut self.log)
    }

    pub fn finish(mut self) -> Result<(), StoreError> {
        self.log.sync()
    }
}
