#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rubricon_core::backend::Backend;
use rubricon_core::metrics::AlphaScale;
use rubricon_core::model::{Points, Transcript};
use rubricon_core::pipeline::{self, GradedItem, LoadedConfig};
use rubricon_core::store::{Clock, RunStore};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mock-exam")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn p(s: &str) -> Points {
    s.parse().unwrap()
}

pub fn load_fixture() -> LoadedConfig {
    LoadedConfig::load(&fixture_dir().join("run.json")).unwrap()
}

pub fn backend(cfg: &LoadedConfig, name: &str) -> Arc<dyn Backend> {
    cfg.backends().unwrap().remove(name).unwrap()
}

pub async fn extract(cfg: &LoadedConfig) -> Vec<Transcript> {
    let submissions = pipeline::load_submissions(&cfg.path(&cfg.config.pages)).unwrap();
    let ocr = backend(cfg, &cfg.config.ocr_backend);
    let variants = cfg.config.grading.plan.n_ocr_variants;
    pipeline::run_extraction(cfg, &submissions, ocr.as_ref(), variants)
        .await
        .unwrap()
        .transcripts
}

pub async fn grade(cfg: &LoadedConfig, transcripts: &[Transcript]) -> Vec<GradedItem> {
    let grader = backend(cfg, &cfg.config.grading_backend);
    pipeline::grade_all(&cfg.exam, transcripts, &cfg.config.grading, grader.as_ref())
        .await
        .unwrap()
}

/// Extract, grade, record and evaluate the bundled exam into `root`.
pub async fn full_run(root: &Path, run_id: &str) -> RunStore {
    let cfg = load_fixture();
    let transcripts = extract(&cfg).await;
    let items = grade(&cfg, &transcripts).await;
    let store = RunStore::open(root).with_clock(Clock::Fixed(1_700_000_000));
    pipeline::record_run(&store, run_id, &cfg, &items).unwrap();
    let truth = pipeline::load_truth(&fixture_dir().join("truth.json")).unwrap();
    pipeline::evaluate_run(&store, run_id, &truth, AlphaScale::Interval).unwrap();
    store
}

/// Pairwise-disagreement form of Krippendorff's alpha, in floating point.
///
/// Units with fewer than two values are not pairable. Returns `None` when
/// fewer than two pairable values exist or the expected disagreement is 0.
pub fn alpha_oracle(units: &[Vec<f64>], interval: bool) -> Option<f64> {
    let delta = |a: f64, b: f64| if interval { (a - b) * (a - b) } else if a == b { 0.0 } else { 1.0 };
    let pairable: Vec<&Vec<f64>> = units.iter().filter(|u| u.len() >= 2).collect();
    let all: Vec<f64> = pairable.iter().flat_map(|u| u.iter().copied()).collect();
    let n = all.len() as f64;
    if all.len() < 2 {
        return None;
    }
    let mut observed = 0.0;
    for u in &pairable {
        let m = u.len() as f64;
        let mut s = 0.0;
        for (i, a) in u.iter().enumerate() {
            for (j, b) in u.iter().enumerate() {
                if i != j {
                    s += delta(*a, *b);
                }
            }
        }
        observed += s / (m - 1.0);
    }
    observed /= n;
    let mut expected = 0.0;
    for (i, a) in all.iter().enumerate() {
        for (j, b) in all.iter().enumerate() {
            if i != j {
                expected += delta(*a, *b);
            }
        }
    }
    expected /= n * (n - 1.0);
    (expected > 0.0).then(|| 1.0 - observed / expected)
}
