//! Acceptance suite. Each check prints one `PASS`/`FAIL` line; the process
//! exits non-zero if any check fails.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{alpha_oracle, fixture_dir, golden_dir, load_fixture, p};
use rubricon_core::engine::{sigma_decision_sd, CannotDecideReason, Decision};
use rubricon_core::extract::{dissect_transcript, DissectError, MarkerGrammar};
use rubricon_core::metrics::{
    contingency_metrics, krippendorff_alpha, robustness_alpha, AlphaScale, ContingencyTable, GradePairSeries,
};
use rubricon_core::model::{PointGrid, Points};
use rubricon_core::pipeline;
use rubricon_core::prompt::{
    render_free_prompt, render_rule_prompt, render_transcription_prompt, template_catalog, JudgementFormat,
};
use rubricon_core::store::{INDEX, LOG, REPORT_JSON, REPORT_TEXT};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(started: Instant, budget: Duration) -> Result<(), String> {
    let took = started.elapsed();
    ensure(took < budget, || format!("took {took:?}, budget {budget:?}"))
}

fn half_grid(max: i64) -> PointGrid {
    PointGrid::uniform(Points::from_integer(max), Points::new(1, 2)).unwrap()
}

fn sigma_worked_examples() -> Check {
    let started = Instant::now();
    let grid = half_grid(2);
    let mean = p("1.21");
    let cases = [
        ("0.13", Decision::CanDecide { value: p("1") }),
        ("0.23", Decision::CanDecide { value: p("1") }),
        (
            "0.31",
            Decision::CannotDecide {
                reason: CannotDecideReason::Spread,
            },
        ),
    ];
    for (sigma, want) in cases {
        let got = sigma_decision_sd(mean, p(sigma), &grid);
        ensure(got == want, || format!("1.21 ± {sigma}: got {got:?}, want {want:?}"))?;
    }
    within_budget(started, Duration::from_secs(1))?;
    Ok("1.21 ± 0.13 / 0.23 / 0.31 on {0, 0.5, 1, 1.5, 2}".into())
}

fn contingency_row() -> Check {
    let started = Instant::now();
    let t = ContingencyTable {
        tp: 68,
        fp: 17,
        fn_: 0,
        tn: 15,
    };
    let m = contingency_metrics(&t);
    let got = [m.accuracy, m.precision, m.recall, m.f1, m.fp_rate];
    let want = [0.83, 0.80, 1.00, 0.89, 0.17];
    for (name, (g, w)) in ["accuracy", "precision", "recall", "f1", "fp-rate"]
        .iter()
        .zip(got.iter().zip(want))
    {
        let g = g.ok_or_else(|| format!("{name} undefined"))?;
        ensure((g - w).abs() <= 0.005, || format!("{name}: {g:.4} vs {w}"))?;
    }
    within_budget(started, Duration::from_secs(1))?;
    Ok(format!(
        "acc {:.3} prec {:.3} rec {:.3} f1 {:.3} fp {:.3}",
        got[0].unwrap(),
        got[1].unwrap(),
        got[2].unwrap(),
        got[3].unwrap(),
        got[4].unwrap()
    ))
}

fn random_pairs(rng: &mut ChaCha8Rng) -> Vec<(Points, Points)> {
    let len = rng.random_range(2..=50);
    (0..len)
        .map(|_| {
            (
                Points::from_integer(rng.random_range(0..=4)),
                Points::from_integer(rng.random_range(0..=4)),
            )
        })
        .collect()
}

fn to_units(pairs: &[(Points, Points)]) -> Vec<Vec<f64>> {
    pairs.iter().map(|(a, b)| vec![a.to_f64(), b.to_f64()]).collect()
}

/// Compare the library against the oracle; both must agree on definedness.
fn compare(pairs: &[(Points, Points)], scale: AlphaScale) -> Result<Option<f64>, String> {
    let got = krippendorff_alpha(&GradePairSeries::new(pairs.to_vec(), scale)).ok();
    let want = alpha_oracle(&to_units(pairs), scale == AlphaScale::Interval);
    match (got, want) {
        (Some(g), Some(w)) if (g - w).abs() <= 1e-9 => Ok(Some(g)),
        (None, None) => Ok(None),
        (g, w) => Err(format!("{scale} alpha {g:?} vs oracle {w:?} on {pairs:?}")),
    }
}

fn alpha_oracle_agreement() -> Check {
    let started = Instant::now();
    let identical: Vec<(Points, Points)> = (0..5).map(|v| (Points::from_integer(v), Points::from_integer(v))).collect();
    for scale in [AlphaScale::Nominal, AlphaScale::Interval] {
        let a = krippendorff_alpha(&GradePairSeries::new(identical.clone(), scale)).map_err(|e| e.to_string())?;
        ensure(a == 1.0, || format!("identical vectors, {scale}: {a}"))?;
    }
    let swap = vec![(p("0"), p("1")), (p("1"), p("0"))];
    let a = krippendorff_alpha(&GradePairSeries::new(swap, AlphaScale::Nominal)).map_err(|e| e.to_string())?;
    ensure(a == -0.5, || format!("[(0,1),(1,0)] nominal: {a}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x0a1f_a001);
    let mut defined = 0;
    for _ in 0..500 {
        let pairs = random_pairs(&mut rng);
        for scale in [AlphaScale::Nominal, AlphaScale::Interval] {
            if compare(&pairs, scale)?.is_some() {
                defined += 1;
            }
        }
    }
    within_budget(started, Duration::from_secs(10))?;
    Ok(format!("500 instances x 2 scales, {defined} defined, all within 1e-9"))
}

fn interval_affine_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0a1f_a002);
    let mut checked = 0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let pairs = random_pairs(&mut rng);
        let a = Points::new(rng.random_range(1..=12), rng.random_range(1..=4));
        let b = Points::new(rng.random_range(-20..=20), rng.random_range(1..=4));
        let mapped: Vec<(Points, Points)> = pairs.iter().map(|(x, y)| (a * *x + b, a * *y + b)).collect();
        let before = krippendorff_alpha(&GradePairSeries::new(pairs, AlphaScale::Interval)).ok();
        let after = krippendorff_alpha(&GradePairSeries::new(mapped, AlphaScale::Interval)).ok();
        match (before, after) {
            (Some(x), Some(y)) => {
                worst = worst.max((x - y).abs());
                ensure((x - y).abs() <= 1e-9, || format!("alpha {x} became {y} under {a}·x + {b}"))?;
                checked += 1;
            }
            (None, None) => {}
            (x, y) => return Err(format!("definedness changed: {x:?} vs {y:?}")),
        }
    }
    Ok(format!("{checked} defined instances, max deviation {worst:.1e}"))
}

fn prompt_goldens() -> Check {
    let dir = golden_dir().join("prompts");
    let catalog = template_catalog();
    let mut on_disk: Vec<String> = std::fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .collect();
    on_disk.sort();
    let mut names: Vec<String> = catalog.iter().map(|(n, _)| n.to_string()).collect();
    names.sort();
    ensure(on_disk == names, || format!("golden files {on_disk:?} vs templates {names:?}"))?;
    for (name, body) in &catalog {
        let want = std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(body.as_bytes() == want.as_slice(), || {
            format!("{name} differs:\n--- rendered\n{body}\n--- golden\n{}", String::from_utf8_lossy(&want))
        })?;
    }
    let golden = |name: &str| std::fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"));
    let (system, user) = render_transcription_prompt(false, None).map_err(|e| e.to_string())?;
    ensure(system == golden("transcription_system.txt")? && user.is_none(), || "transcription without question".into())?;
    let (system, user) = render_transcription_prompt(true, Some("[Question]")).map_err(|e| e.to_string())?;
    ensure(
        system == golden("transcription_system.txt")? && user == Some(golden("transcription_question_user.txt")?),
        || "transcription with question".into(),
    )?;
    for (format, ignore, name) in [
        (JudgementFormat::Verbalized, true, "verbalized_ignore_system.txt"),
        (JudgementFormat::Verbalized, false, "verbalized_system.txt"),
        (JudgementFormat::Mcq, true, "mcq_ignore_system.txt"),
        (JudgementFormat::Mcq, false, "mcq_system.txt"),
    ] {
        let r = render_rule_prompt("[Grading rule]", "[Answer]", format, ignore);
        ensure(r.system == golden(name)? && r.user == golden("rule_user.txt")?, || format!("rule prompt {name}"))?;
    }
    let free = render_free_prompt("[Question]", 2, "[Answer]").map_err(|e| e.to_string())?;
    ensure(
        free.system == golden("free_system.txt")?
            && free.user == golden("free_user.txt")?.replace("[Number of points]", "2"),
        || "free grading prompt".into(),
    )?;
    Ok(format!("{} templates byte-identical", catalog.len()))
}

fn snapshot(root: &std::path::Path) -> Result<BTreeMap<&'static str, Vec<u8>>, String> {
    [LOG, INDEX, REPORT_JSON, REPORT_TEXT]
        .into_iter()
        .map(|name| {
            std::fs::read(root.join("r1").join(name))
                .map(|b| (name, b))
                .map_err(|e| format!("{name}: {e}"))
        })
        .collect()
}

async fn end_to_end_determinism() -> Check {
    let started = Instant::now();
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = common::full_run(a.path(), "r1").await;
    common::full_run(b.path(), "r1").await;
    let (first, second) = (snapshot(a.path())?, snapshot(b.path())?);
    for (name, bytes) in &first {
        ensure(second[name] == *bytes, || format!("{name} differs between runs"))?;
    }
    let data = store.load("r1").map_err(|e| e.to_string())?;
    ensure(data.aggregates.len() == 9, || format!("{} aggregates", data.aggregates.len()))?;
    // Every answered item has 25 cells minus the variants that came back empty.
    for agg in data.aggregates.iter().filter(|a| !a.is_unanswered()) {
        let nonempty = data
            .transcripts
            .iter()
            .filter(|t| t.student_id == agg.student_id && t.problem_id == agg.problem_id && !t.empty)
            .count();
        let cells = agg.n_samples + agg.n_dropped;
        ensure(cells == nonempty * 5, || {
            format!("{}/{}: {cells} cells for {nonempty} variants", agg.student_id, agg.problem_id)
        })?;
    }
    within_budget(started, Duration::from_secs(30))?;
    Ok(format!("records.log {} bytes identical across two roots", first[LOG].len()))
}

fn dissector_goldens() -> Check {
    let grammar = MarkerGrammar::default();
    let exam = load_fixture().exam.exam;
    let dir = golden_dir().join("dissect");
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).map_err(|e| format!("{name}: {e}"));
    for case in ["layout", "midline"] {
        let text = read(&format!("{case}.txt"))?;
        let want: BTreeMap<String, String> =
            serde_json::from_str(&read(&format!("{case}.expected.json"))?).map_err(|e| e.to_string())?;
        let d = dissect_transcript(&text, &grammar, &exam);
        let known: Vec<&str> = want.keys().map(String::as_str).collect();
        let unexpected: Vec<_> = d
            .issues
            .iter()
            .filter(|i| !matches!(i, DissectError::MissingMarker(id) if !known.contains(&id.as_str())))
            .collect();
        ensure(unexpected.is_empty(), || format!("{case}: issues {unexpected:?}"))?;
        ensure(d.answers == want, || format!("{case}: got {:?}", d.answers))?;
    }
    let d = dissect_transcript(&read("missing.txt")?, &grammar, &exam);
    ensure(d.issues == [DissectError::MissingMarker("2".into())], || {
        format!("missing: issues {:?}", d.issues)
    })?;
    ensure(d.answers.keys().eq(["1", "3"].iter()), || format!("missing: answers {:?}", d.answers))?;
    Ok("layout, mid-line mention and missing-marker fixtures".into())
}

async fn paraphrase_robustness() -> Check {
    let cfg = load_fixture();
    let transcripts = common::extract(&cfg).await;
    let grader = common::backend(&cfg, &cfg.config.grading_backend);
    let scale = AlphaScale::Interval;
    let r = pipeline::paraphrase_robustness(&cfg.exam, &transcripts, &cfg.config.grading, grader.as_ref(), scale)
        .await
        .map_err(|e| e.to_string())?;
    ensure(r.grades.len() == 5, || format!("{} paraphrase sets", r.grades.len()))?;
    ensure(r.alpha == 1.0, || format!("identical judgements gave alpha {}", r.alpha))?;

    let mut grades = r.grades.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0a1f_a008);
    while grades[2] == r.grades[2] {
        grades[2].shuffle(&mut rng);
    }
    let got = robustness_alpha(&grades, scale).map_err(|e| e.to_string())?;
    let units: Vec<Vec<f64>> = (0..grades[0].len())
        .map(|i| grades.iter().map(|row| row[i].to_f64()).collect())
        .collect();
    let want = alpha_oracle(&units, true).ok_or("oracle undefined")?;
    ensure((got - want).abs() <= 1e-9, || format!("permuted: {got} vs oracle {want}"))?;
    Ok(format!("identical 1.0, one permuted variant {got:.6} = oracle"))
}

fn sigma_monotonicity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0a1f_a009);
    let mut undecided = 0;
    for _ in 0..1000 {
        let max = rng.random_range(1..=6);
        let step = Points::new(1, rng.random_range(1..=4));
        let grid = PointGrid::uniform(Points::from_integer(max), step).map_err(|e| e.to_string())?;
        let mean = Points::new(rng.random_range(0..=max * 100), 100);
        let sigma = Points::new(rng.random_range(0..=120), 100);
        if !matches!(sigma_decision_sd(mean, sigma, &grid), Decision::CannotDecide { .. }) {
            continue;
        }
        undecided += 1;
        for k in 1..=20 {
            let wider = sigma + Points::new(k * k, 100);
            let d = sigma_decision_sd(mean, wider, &grid);
            ensure(matches!(d, Decision::CannotDecide { .. }), || {
                format!("mean {mean}: undecided at σ={sigma} but {d:?} at σ={wider}")
            })?;
        }
    }
    Ok(format!("1000 draws, {undecided} undecided, none decided at a wider σ"))
}

fn report(n: usize, name: &str, result: Check) -> bool {
    match result {
        Ok(detail) => {
            println!("criterion {n} {name}: PASS ({detail})");
            true
        }
        Err(why) => {
            println!("criterion {n} {name}: FAIL ({why})");
            false
        }
    }
}

fn main() {
    // The fixture must be present; a bad checkout should fail loudly.
    assert!(fixture_dir().join("run.json").is_file(), "bundled fixture missing");
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let results = [
        report(1, "sigma worked examples", sigma_worked_examples()),
        report(2, "contingency row", contingency_row()),
        report(3, "alpha oracle", alpha_oracle_agreement()),
        report(4, "interval affine invariance", interval_affine_invariance()),
        report(5, "prompt goldens", prompt_goldens()),
        report(6, "end-to-end determinism", rt.block_on(end_to_end_determinism())),
        report(7, "dissector goldens", dissector_goldens()),
        report(8, "paraphrase robustness", rt.block_on(paraphrase_robustness())),
        report(9, "sigma monotonicity", sigma_monotonicity()),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
