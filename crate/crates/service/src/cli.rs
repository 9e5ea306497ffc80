//! Command line entry points.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rubricon_core::backend::BackendKind;
use rubricon_core::engine::{Aggregation, GradingMode};
use rubricon_core::metrics::AlphaScale;
use rubricon_core::pipeline::{self, LoadedConfig, PipelineError, Workflow};
use rubricon_core::prompt::{template_catalog, JudgementFormat};
use rubricon_core::store::{Clock, RunStore};

#[derive(Debug, Parser)]
#[command(name = "rubricon", version, about = "Rubric-based grading with sampled model judgements")]
pub struct Cli {
    /// Use this unix time for every timestamp written (reproducible records).
    #[arg(long, global = true, value_name = "SECS")]
    pub fixed_time: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Transcribe page images into per-problem transcripts.
    Extract(ExtractArgs),
    /// Grade transcripts and record a run with its review queue.
    Grade(GradeArgs),
    /// Compare a run with ground truth and write report files.
    Evaluate(EvaluateArgs),
    /// Generate rule paraphrases, or measure grading robustness across them.
    Variants(VariantsArgs),
    /// Serve the review API.
    Serve(ServeArgs),
    /// Write every prompt template to a directory.
    DumpPrompts(DumpArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WorkflowArg {
    Box,
    WholePage,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Verbalized,
    Mcq,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Rubric,
    Free,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AggregationArg {
    Majority,
    Mean,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    Nominal,
    Interval,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Replace every configured backend by fixtures from this directory.
    #[arg(long, value_name = "DIR")]
    pub mock_fixtures: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub common: Common,
    /// Transcription backend (defaults to the configured one).
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long, value_enum)]
    pub workflow: Option<WorkflowArg>,
    /// Output file (defaults to the configured transcripts path).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub run: String,
    /// Grading backend (defaults to the configured one).
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
    /// Also queue unanswered items for review.
    #[arg(long)]
    pub review_unanswered: bool,
    /// Transcripts file (defaults to the configured path).
    #[arg(long, value_name = "FILE")]
    pub transcripts: Option<PathBuf>,
    /// Run store root (defaults to the configured path).
    #[arg(long, value_name = "DIR")]
    pub runs_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    #[arg(long)]
    pub run: String,
    /// Ground truth: JSON array of {student_id, problem_id, points}.
    #[arg(long, value_name = "FILE")]
    pub truth: PathBuf,
    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,
    /// Run store root (defaults to the configured path).
    #[arg(long, value_name = "DIR")]
    pub runs_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VariantsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub backend: Option<String>,
    /// Paraphrases per rule.
    #[arg(long, default_value_t = 5)]
    pub count: usize,
    /// Where to write the exam config with paraphrases (defaults to stdout).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Instead of generating, grade once per existing paraphrase and report
    /// their agreement.
    #[arg(long)]
    pub robustness: bool,
    #[arg(long, value_name = "FILE")]
    pub transcripts: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Run configuration; its runs directory is served.
    #[arg(long, value_name = "FILE", conflicts_with = "runs_dir")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub runs_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Review console assets served under `/`.
    #[arg(long, value_name = "DIR")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

fn clock(cli_time: Option<u64>) -> Clock {
    cli_time.map_or(Clock::System, Clock::Fixed)
}

fn load(common: &Common) -> Result<(LoadedConfig, Option<BackendKind>)> {
    let mut cfg = LoadedConfig::load(&common.config)?;
    let ocr_kind = cfg.backend_config(&cfg.config.ocr_backend).ok().map(|b| b.kind);
    if let Some(dir) = &common.mock_fixtures {
        cfg.use_mock_fixtures(dir);
    }
    Ok((cfg, ocr_kind))
}

fn pick(cfg: &LoadedConfig, name: &str) -> Result<std::sync::Arc<dyn rubricon_core::backend::Backend>> {
    let mut backends = cfg.backends()?;
    match backends.remove(name) {
        Some(b) => Ok(b),
        None => Err(rubricon_core::model::ConfigError::validation("backend", format!("no backend named `{name}`")).into()),
    }
}

async fn extract(args: ExtractArgs) -> Result<()> {
    let (mut cfg, configured_kind) = load(&args.common)?;
    if let Some(w) = args.workflow {
        cfg.config.workflow = match w {
            WorkflowArg::Box => Workflow::Box,
            WorkflowArg::WholePage => Workflow::WholePage,
        };
        cfg.validate()?;
    }
    let name = args.backend.clone().unwrap_or_else(|| cfg.config.ocr_backend.clone());
    let kind = match &args.backend {
        Some(n) => cfg.backend_config(n)?.kind,
        None => configured_kind.unwrap_or(BackendKind::Chat),
    };
    // An image-to-LaTeX service is deterministic: one pass is enough.
    let variants = match kind {
        BackendKind::MathOcr => 1,
        _ => cfg.config.grading.plan.n_ocr_variants,
    };
    if cfg.config.workflow == Workflow::Box {
        cfg.layout()?;
    }
    let backend = pick(&cfg, &name)?;
    let submissions = pipeline::load_submissions(&cfg.path(&cfg.config.pages))?;
    let output = pipeline::run_extraction(&cfg, &submissions, backend.as_ref(), variants).await?;
    let path = args.out.unwrap_or_else(|| cfg.transcripts_path());
    pipeline::write_transcripts(&path, &output.transcripts)?;
    print!("{}", output.summary_table(&cfg.exam.exam));
    for issue in &output.issues {
        eprintln!(
            "warning: student {} problem {} variant {}: {}",
            issue.student_id, issue.problem_id, issue.variant_index, issue.message
        );
    }
    println!("wrote {} transcripts to {}", output.transcripts.len(), path.display());
    Ok(())
}

fn apply_grading_flags(cfg: &mut LoadedConfig, args: &GradeArgs) -> Result<()> {
    let g = &mut cfg.config.grading;
    if let Some(f) = args.format {
        g.format = match f {
            FormatArg::Verbalized => JudgementFormat::Verbalized,
            FormatArg::Mcq => JudgementFormat::Mcq,
        };
    }
    if let Some(m) = args.mode {
        g.mode = match m {
            ModeArg::Rubric => GradingMode::Rubric,
            ModeArg::Free => GradingMode::Free,
        };
    }
    if let Some(a) = args.aggregation {
        g.plan.aggregation = match a {
            AggregationArg::Majority => Aggregation::Majority,
            AggregationArg::Mean => Aggregation::Mean,
        };
    }
    if args.review_unanswered {
        cfg.config.review_unanswered = true;
    }
    cfg.validate()?;
    Ok(())
}

async fn grade(args: GradeArgs, clock: Clock) -> Result<()> {
    let (mut cfg, _) = load(&args.common)?;
    apply_grading_flags(&mut cfg, &args)?;
    let name = args.backend.clone().unwrap_or_else(|| cfg.config.grading_backend.clone());
    let backend = pick(&cfg, &name)?;
    let path = args.transcripts.clone().unwrap_or_else(|| cfg.transcripts_path());
    let transcripts = pipeline::read_transcripts(&path)?;
    let items = pipeline::grade_all(&cfg.exam, &transcripts, &cfg.config.grading, backend.as_ref()).await?;
    let store = RunStore::open(args.runs_dir.clone().unwrap_or_else(|| cfg.runs_dir())).with_clock(clock);
    let tasks = pipeline::record_run(&store, &args.run, &cfg, &items)?;
    print!("{}", pipeline::decision_summary(&items));
    println!("run `{}`: {} items graded, {} queued for review", args.run, items.len(), tasks.len());
    Ok(())
}

fn scale(arg: Option<ScaleArg>, default: AlphaScale) -> AlphaScale {
    match arg {
        Some(ScaleArg::Nominal) => AlphaScale::Nominal,
        Some(ScaleArg::Interval) => AlphaScale::Interval,
        None => default,
    }
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = LoadedConfig::load(&args.config)?;
    let store = RunStore::open(args.runs_dir.clone().unwrap_or_else(|| cfg.runs_dir()));
    let truth = pipeline::load_truth(&args.truth)?;
    let eval = pipeline::evaluate_run(&store, &args.run, &truth, scale(args.scale, cfg.config.alpha_scale))?;
    for s in &eval.skipped {
        eprintln!("warning: skipped {s}");
    }
    print!("{}", eval.report.to_table());
    Ok(())
}

async fn variants(args: VariantsArgs) -> Result<()> {
    let (cfg, _) = load(&args.common)?;
    let name = args.backend.clone().unwrap_or_else(|| cfg.config.grading_backend.clone());
    let backend = pick(&cfg, &name)?;
    if args.robustness {
        let path = args.transcripts.clone().unwrap_or_else(|| cfg.transcripts_path());
        let transcripts = pipeline::read_transcripts(&path)?;
        let r = pipeline::paraphrase_robustness(
            &cfg.exam,
            &transcripts,
            &cfg.config.grading,
            backend.as_ref(),
            scale(args.scale, cfg.config.alpha_scale),
        )
        .await?;
        println!(
            "{} paraphrase gradings over {} items: alpha ({}) = {:.4}",
            r.grades.len(),
            r.items.len(),
            r.scale,
            r.alpha
        );
        return Ok(());
    }
    let temperature = cfg.config.grading.plan.grading_temperature;
    let exam = pipeline::generate_variants(&cfg.exam, &cfg.config.grading, backend.as_ref(), args.count, temperature).await?;
    let json = exam.to_json();
    match &args.out {
        Some(path) => std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}

async fn serve(args: ServeArgs, clock: Clock) -> Result<()> {
    let runs_dir = match (&args.config, &args.runs_dir) {
        (Some(c), _) => LoadedConfig::load(c)?.runs_dir(),
        (None, Some(d)) => d.clone(),
        (None, None) => bail!("serve needs --config or --runs-dir"),
    };
    let store = RunStore::open(runs_dir).with_clock(clock);
    let app = crate::api::router(crate::api::AppState::new(store), args.static_dir.clone());
    let addr = SocketAddr::new(args.host, args.port);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, "serving review API");
    println!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

fn dump_prompts(args: DumpArgs) -> Result<()> {
    write_prompts(&args.out)?;
    println!("wrote prompt templates to {}", args.out.display());
    Ok(())
}

pub fn write_prompts(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, body) in template_catalog() {
        let path = dir.join(name);
        std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Exit status for a failed command: 2 for model-service failures, 1 for
/// everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PipelineError>() {
        Some(e) if e.is_backend() => 2,
        _ => 1,
    }
}

pub async fn run(cli: Cli) -> ExitCode {
    let clock = clock(cli.fixed_time);
    let result = match cli.command {
        Command::Extract(a) => extract(a).await,
        Command::Grade(a) => grade(a, clock).await,
        Command::Evaluate(a) => evaluate(a),
        Command::Variants(a) => variants(a).await,
        Command::Serve(a) => serve(a, clock).await,
        Command::DumpPrompts(a) => dump_prompts(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
