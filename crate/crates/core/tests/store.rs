mod common;

use std::io::Write;

use common::{full_run, p};
use rubricon_core::engine::Decision;
use rubricon_core::store::{FinalGrade, RunStore, StoreError, TaskStatus, LOCK, LOG};

#[tokio::test]
async fn reload_reproduces_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    let store = full_run(dir.path(), "r1").await;
    let data = store.load("r1").unwrap();
    assert!(data.issues.is_empty(), "{:?}", data.issues);
    assert_eq!(data.aggregates.len(), 9);
    assert_eq!(data.meta.as_ref().unwrap().created_at, 1_700_000_000);
    assert!(data.exam.is_some());
    // 3 students x 3 problems x 5 variants.
    assert_eq!(data.transcripts.len(), 45);
    let cannot = data
        .aggregates
        .iter()
        .filter(|a| matches!(a.decision, Some(Decision::CannotDecide { .. })))
        .count();
    assert_eq!(data.tasks.len(), cannot);
    assert!(data.tasks.iter().all(|t| t.is_open()));
    let runs = store.list_runs().unwrap();
    assert_eq!(runs.len(), 1);
    assert!(runs[0].has_report);
    assert_eq!(runs[0].n_open, cannot);
}

#[tokio::test]
async fn corrupted_line_is_reported_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let store = full_run(dir.path(), "r1").await;
    let log = dir.path().join("r1").join(LOG);
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    // Flip a digit inside the payload of the last aggregate record.
    let idx = lines.iter().rposition(|l| l.starts_with("{\"kind\":\"aggregate\"")).unwrap();
    lines[idx] = lines[idx].replacen("\"n_samples\":", "\"n_samples\":1", 1);
    std::fs::write(&log, lines.join("\n") + "\n").unwrap();
    let data = store.load("r1").unwrap();
    assert_eq!(data.issues.len(), 1);
    assert_eq!(data.issues[0].line, idx + 1);
    assert_eq!(data.aggregates.len(), 8);
}

#[tokio::test]
async fn torn_tail_does_not_block_appends() {
    let dir = tempfile::tempdir().unwrap();
    let store = full_run(dir.path(), "r1").await;
    let log = dir.path().join("r1").join(LOG);
    std::fs::OpenOptions::new()
        .append(true)
        .open(&log)
        .unwrap()
        .write_all(b"{\"kind\":\"resolution\",\"payl")
        .unwrap();
    let task = store.load("r1").unwrap().tasks[0].clone();
    let grid_value = p("1");
    store
        .resolve_review("r1", &task.task_id, grid_value, "ta", "")
        .unwrap();
    let data = store.load("r1").unwrap();
    assert_eq!(data.issues.len(), 1, "only the torn line is bad: {:?}", data.issues);
    assert!(!data.task(&task.task_id).unwrap().is_open());
}

#[tokio::test]
async fn second_writer_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let store = full_run(dir.path(), "r1").await;
    let w = store.writer("r1").unwrap();
    assert!(matches!(store.writer("r1"), Err(StoreError::Locked(_))));
    let task = store.load("r1").unwrap().tasks[0].task_id.clone();
    assert!(matches!(
        store.resolve_review("r1", &task, p("1"), "ta", ""),
        Err(StoreError::Locked(_))
    ));
    drop(w);
    assert!(!dir.path().join("r1").join(LOCK).exists());
    store.writer("r1").unwrap();
}

#[tokio::test]
async fn resolving_twice_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let store = full_run(dir.path(), "r1").await;
    let task = store.load("r1").unwrap().tasks[0].clone();
    let resolved = store
        .resolve_review("r1", &task.task_id, p("0.5"), "ta", "partial")
        .unwrap();
    assert!(matches!(resolved.status, TaskStatus::Resolved { final_points, .. } if final_points == p("0.5")));
    assert!(matches!(
        store.resolve_review("r1", &task.task_id, p("1"), "ta", ""),
        Err(StoreError::AlreadyResolved(_))
    ));
    let data = store.load("r1").unwrap();
    assert_eq!(data.resolutions.len(), 1);
    let agg = data.aggregate(&task.student_id, &task.problem_id).unwrap();
    assert_eq!(data.final_grade(agg), FinalGrade::Resolved { points: p("0.5") });
}

#[tokio::test]
async fn off_grid_resolution_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let store = full_run(dir.path(), "r1").await;
    let task = store.load("r1").unwrap().tasks[0].clone();
    for bad in ["0.25", "3", "-1"] {
        assert!(matches!(
            store.resolve_review("r1", &task.task_id, p(bad), "ta", ""),
            Err(StoreError::InvalidPoints { .. })
        ));
    }
    assert!(store.load("r1").unwrap().task(&task.task_id).unwrap().is_open());
    assert!(matches!(
        store.resolve_review("r1", "0000000000000000", p("1"), "ta", ""),
        Err(StoreError::UnknownTask(_))
    ));
    assert!(matches!(
        store.resolve_review("nope", &task.task_id, p("1"), "ta", ""),
        Err(StoreError::UnknownRun(_))
    ));
}

#[tokio::test]
async fn every_item_has_exactly_one_final_grade_source() {
    let dir = tempfile::tempdir().unwrap();
    let store = full_run(dir.path(), "r1").await;
    let before = store.load("r1").unwrap();
    for t in &before.tasks {
        store.resolve_review("r1", &t.task_id, p("0"), "ta", "").unwrap();
    }
    let data = store.load("r1").unwrap();
    let grades = data.final_grades();
    assert_eq!(grades.len(), data.aggregates.len());
    for a in &data.aggregates {
        let g = grades[&(a.student_id.clone(), a.problem_id.clone())];
        match a.decision {
            Some(Decision::CanDecide { value }) => assert_eq!(g, FinalGrade::Automatic { points: value }),
            Some(Decision::CannotDecide { .. }) => assert_eq!(g, FinalGrade::Resolved { points: p("0") }),
            Some(Decision::Unanswered) => assert_eq!(g, FinalGrade::Unanswered),
            None => assert!(matches!(g, FinalGrade::Automatic { .. })),
        }
    }
    assert_eq!(data.open_tasks().count(), 0);
}

#[tokio::test]
async fn run_ids_are_validated_and_not_reused() {
    let dir = tempfile::tempdir().unwrap();
    let store = full_run(dir.path(), "r1").await;
    assert!(matches!(store.load("../r1"), Err(StoreError::InvalidRunId(_))));
    let cfg = common::load_fixture();
    let err = rubricon_core::pipeline::record_run(&store, "r1", &cfg, &[]).unwrap_err();
    assert!(err.to_string().contains("r1"), "{err}");
    let _ = RunStore::open(dir.path().join("missing")).list_runs().unwrap();
}
