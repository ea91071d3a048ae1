use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use motion_curate::annotate::{parse_motion_json, serialize_motion};
use motion_curate::backends::conformance::run_conformance;
use motion_curate::backends::{
    BackendClient, FrameMode, HttpConfig, HttpTransport, MockBackend, MockScript, Recorder, ReplayTransport, Transport,
};
use motion_curate::evaluate::{
    dataset_stats, judge_by_video, render_accuracy_table, render_judge_table, render_stats_table, run_benchmark,
    BenchItem, JUDGE_RUNS,
};
use motion_curate::generate::QAItem;
use motion_curate::pipeline::{curate, load_dataset, CurateConfig, CurateOptions, VideoStatus};
use motion_curate::preprocess::DecoderRegistry;

#[derive(Parser)]
#[command(
    name = "motion-curate",
    version,
    about = "Automated motion annotation and QA curation"
)]
struct Cli {
    /// TOML config: `workers`, `[pipeline]` thresholds and seed, `[backend]`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline over a directory of videos.
    Curate(CurateArgs),
    /// Re-run the pipeline against recorded backend transcripts.
    Replay {
        /// Directory of `<video_id>.jsonl` transcripts.
        transcripts: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Dataset statistics of a curated output directory.
    Stats {
        dataset: PathBuf,
        /// Also write the statistics as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Multiple-choice accuracy of a model on a qa.jsonl benchmark.
    Eval {
        qa: PathBuf,
        #[arg(long, default_value = "model")]
        model: String,
        #[arg(long)]
        benchmark: Option<String>,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Compare two QA sets of the same videos with the LLM judge.
    Judge {
        qa_a: PathBuf,
        qa_b: PathBuf,
        #[arg(long, default_value_t = JUDGE_RUNS)]
        runs: usize,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Check motion JSON files (or directories of `*.motion.json`).
    ValidateSchema {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Run the protocol conformance suite against a backend.
    Conformance {
        #[command(flatten)]
        backend: BackendArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Video file or directory of videos.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Skip videos already finished under the same config hash.
    #[arg(long)]
    resume: bool,
    /// Send frames as PNG files under this directory instead of inline.
    #[arg(long)]
    shared_frames: Option<PathBuf>,
}

#[derive(Args)]
struct CurateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args, Clone, Default)]
struct BackendArgs {
    /// Serve every model call from the mock scripts in this directory.
    #[arg(long)]
    mock: Option<PathBuf>,
    /// Model service base URL; overrides the config file.
    #[arg(long)]
    url: Option<String>,
    /// Record every backend exchange as JSONL transcripts here.
    #[arg(long)]
    transcript: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<CurateConfig> {
    match path {
        Some(p) => CurateConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(CurateConfig::default()),
    }
}

fn transport(args: &BackendArgs, cfg: &CurateConfig) -> Result<Arc<dyn Transport>> {
    if let Some(dir) = &args.mock {
        let script = MockScript::load_dir(dir).map_err(anyhow::Error::msg)?;
        return Ok(Arc::new(MockBackend::new(script)));
    }
    let Some(base_url) = args.url.clone().or_else(|| cfg.backend.base_url.clone()) else {
        bail!("no backend: pass --mock <dir>, --url <base>, or set backend.base_url in the config");
    };
    let token = match &cfg.backend.token_env {
        Some(var) => Some(std::env::var(var).with_context(|| format!("reading token from ${var}"))?),
        None => None,
    };
    Ok(Arc::new(HttpTransport::new(HttpConfig {
        base_url,
        token,
        timeout_ms: cfg.backend.timeout_ms,
    })))
}

/// A client for single-shot commands, recording to `<transcript>/<name>.jsonl`.
fn simple_client(args: &BackendArgs, cfg: &CurateConfig, name: &str) -> Result<(BackendClient, Option<Arc<Recorder>>)> {
    let client = BackendClient::new(transport(args, cfg)?, cfg.backend.policy());
    match &args.transcript {
        Some(dir) => {
            let rec = Arc::new(Recorder::create(&dir.join(format!("{name}.jsonl")))?);
            Ok((client.with_recorder(rec.clone()), Some(rec)))
        }
        None => Ok((client, None)),
    }
}

fn finish(rec: Option<Arc<Recorder>>) -> Result<()> {
    if let Some(r) = rec {
        r.finish().map_err(anyhow::Error::msg)?;
    }
    Ok(())
}

fn run_curate(
    run: &RunArgs,
    mut cfg: CurateConfig,
    transport: Arc<dyn Transport>,
    transcript: Option<PathBuf>,
) -> Result<ExitCode> {
    if let Some(seed) = run.seed {
        cfg.pipeline.seed = seed;
    }
    let workers = run.workers.or(cfg.workers).unwrap_or(1);
    let opts = CurateOptions {
        input: run.input.clone(),
        out: run.out.clone(),
        policy: cfg.backend.policy(),
        config: cfg.pipeline,
        workers,
        frame_mode: run.shared_frames.clone().map(FrameMode::SharedPath).unwrap_or_default(),
        transcript_dir: transcript,
        resume: run.resume,
    };
    let report = curate(&opts, transport, &DecoderRegistry::default())?;
    for (id, rec) in &report.manifest.videos {
        let status = match rec.status {
            VideoStatus::Done => format!("done, {} questions", rec.questions),
            VideoStatus::Excluded => format!("excluded: {}", rec.reason.as_deref().unwrap_or("")),
            VideoStatus::Failed => format!("failed: {}", rec.reason.as_deref().unwrap_or("")),
        };
        let resumed = if report.resumed.contains(id) { " (resumed)" } else { "" };
        println!("{id}: {status}{resumed}");
    }
    println!(
        "{} questions written to {}",
        report.qa_items,
        opts.out.join("qa.jsonl").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), n + 1)))
        .collect()
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn motion_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_string_lossy().ends_with(".motion.json"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn validate_schema(paths: &[PathBuf]) -> Result<ExitCode> {
    let files = motion_files(paths)?;
    if files.is_empty() {
        bail!("no motion JSON files found");
    }
    let mut bad = 0;
    for f in &files {
        let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        match parse_motion_json(&text) {
            Ok(doc) => {
                let canonical = serialize_motion(&doc) == text.strip_suffix('\n').unwrap_or(&text);
                let note = if canonical { "" } else { " (not in canonical form)" };
                println!("{}: ok, {} objects{note}", f.display(), doc.objects.len());
            }
            Err(e) => {
                bad += 1;
                println!("{}: INVALID: {e}", f.display());
            }
        }
    }
    println!("{} of {} files valid", files.len() - bad, files.len());
    Ok(if bad == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> Result<ExitCode> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Curate(args) => {
            let t = transport(&args.backend, &cfg)?;
            run_curate(&args.run, cfg, t, args.backend.transcript.clone())
        }
        Command::Replay { transcripts, run } => {
            // Use the recording run's config: retries must line up with
            // the recorded transient failures.
            let t = ReplayTransport::load(&transcripts).map_err(anyhow::Error::msg)?;
            run_curate(&run, cfg, Arc::new(t), None)
        }
        Command::Stats { dataset, json } => {
            let (items, durations) = load_dataset(&dataset)?;
            let stats = dataset_stats(&items, &durations)?;
            print!("{}", render_stats_table(&stats));
            if let Some(p) = json {
                write_json(&p, &stats)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            qa,
            model,
            benchmark,
            backend,
            json,
        } => {
            let items: Vec<BenchItem> = read_jsonl(&qa)?;
            let name = benchmark.unwrap_or_else(|| {
                qa.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "benchmark".into())
            });
            let (client, rec) = simple_client(&backend, &cfg, "eval")?;
            let run = run_benchmark(&name, &model, &items, &client)?;
            finish(rec)?;
            print!("{}", render_accuracy_table(std::slice::from_ref(&run)));
            if let Some(p) = json {
                write_json(&p, &run)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Judge {
            qa_a,
            qa_b,
            runs,
            backend,
            json,
        } => {
            let a: Vec<QAItem> = read_jsonl(&qa_a)?;
            let b: Vec<QAItem> = read_jsonl(&qa_b)?;
            let (client, rec) = simple_client(&backend, &cfg, "judge")?;
            let result = judge_by_video(&a, &b, &client, runs)?;
            finish(rec)?;
            for (video, err) in &result.failed {
                eprintln!("{video}: not judged: {err}");
            }
            println!("{} videos judged", result.per_video.len());
            print!("{}", render_judge_table(&result.mean));
            if let Some(p) = json {
                write_json(&p, &result)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateSchema { paths } => validate_schema(&paths),
        Command::Conformance { backend } => {
            let report = run_conformance(transport(&backend, &cfg)?.as_ref());
            for c in &report.cases {
                let mark = if c.passed { "PASS" } else { "FAIL" };
                println!(
                    "{mark} {}{}",
                    c.name,
                    if c.detail.is_empty() {
                        String::new()
                    } else {
                        format!(": {}", c.detail)
                    }
                );
            }
            Ok(if report.all_passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
