use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mock-exam")
}

fn rubricon(args: &[&str], extra: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rubricon"));
    cmd.args(args);
    for p in extra {
        cmd.arg(p);
    }
    cmd.output().unwrap()
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

#[test]
fn extract_grade_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = fixture().join("run.json");
    let transcripts = dir.path().join("t.jsonl");
    let runs = dir.path().join("runs");

    let out = rubricon(&["extract", "--out"], &[&transcripts]);
    assert_eq!(out.status.code(), Some(2), "missing --config is a usage error: {}", text(&out));

    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rubricon"));
    let out = cmd
        .arg("extract")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&transcripts)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("unrecognized"), "{stdout}");
    assert!(stdout.contains("wrote 45 transcripts"), "{stdout}");

    let out = Command::new(env!("CARGO_BIN_EXE_rubricon"))
        .args(["--fixed-time", "1700000000", "grade", "--run", "r1", "--config"])
        .arg(&config)
        .arg("--transcripts")
        .arg(&transcripts)
        .arg("--runs-dir")
        .arg(&runs)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("9 items graded"));

    let out = Command::new(env!("CARGO_BIN_EXE_rubricon"))
        .args(["evaluate", "--run", "r1", "--config"])
        .arg(&config)
        .arg("--truth")
        .arg(fixture().join("truth.json"))
        .arg("--runs-dir")
        .arg(&runs)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out));
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("alpha scale: interval"), "{table}");
    assert!(runs.join("r1/report.json").is_file());

    // A second grade into the same run id is refused.
    let out = Command::new(env!("CARGO_BIN_EXE_rubricon"))
        .args(["grade", "--run", "r1", "--config"])
        .arg(&config)
        .arg("--transcripts")
        .arg(&transcripts)
        .arg("--runs-dir")
        .arg(&runs)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
}

#[test]
fn box_workflow_without_layout_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rubricon"))
        .args(["extract", "--workflow", "box", "--config"])
        .arg(fixture().join("run.json"))
        .arg("--out")
        .arg(dir.path().join("t.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
    assert!(text(&out).to_lowercase().contains("layout"), "{}", text(&out));
}

#[test]
fn backend_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = dir.path().join("empty-fixtures");
    std::fs::create_dir(&fixtures).unwrap();
    std::fs::write(fixtures.join("none.json"), "{\"matchers\": []}").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rubricon"))
        .args(["extract", "--config"])
        .arg(fixture().join("run.json"))
        .arg("--mock-fixtures")
        .arg(&fixtures)
        .arg("--out")
        .arg(dir.path().join("t.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", text(&out));
}

#[test]
fn unknown_run_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rubricon"))
        .args(["evaluate", "--run", "missing", "--config"])
        .arg(fixture().join("run.json"))
        .arg("--truth")
        .arg(fixture().join("truth.json"))
        .arg("--runs-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
}

#[test]
fn dump_prompts_matches_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rubricon"))
        .args(["dump-prompts", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out));
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/prompts");
    let mut n = 0;
    for entry in std::fs::read_dir(&golden).unwrap() {
        let entry = entry.unwrap();
        let written = std::fs::read(dir.path().join(entry.file_name())).unwrap();
        assert_eq!(written, std::fs::read(entry.path()).unwrap(), "{:?}", entry.file_name());
        n += 1;
    }
    assert_eq!(n, std::fs::read_dir(dir.path()).unwrap().count());
}
