//! `r2x` — generate scenes, run episodes, run ablation suites, replay traces.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use r2x::bench::{generate_scene, run_suite, trend_report, write_suite, Matrix, Scenario, SceneParams, TaskTemplate, TrendStatus};
use r2x::orchestrator::trace::{parse_jsonl, render_ascii};
use r2x::orchestrator::{run_episode, OrchestratorConfig, Protocol};
use r2x::planner::{Endpoint, PlannerBackend};

#[derive(Parser)]
#[command(name = "r2x", version, about = "Multi-robot coordination with shared robot and IoT perception")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario file.
    Gen(GenArgs),
    /// Run one episode.
    Run(RunArgs),
    /// Run an ablation matrix over paired seeds.
    Bench(BenchArgs),
    /// Render a trace.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    rooms: usize,
    #[arg(long, default_value_t = 3)]
    team: usize,
    #[arg(long, default_value_t = 0.5)]
    coverage: f64,
    #[arg(long, default_value_t = 7)]
    room_size: i32,
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    /// consolidate, dispose_perishables, power_down or fetch_to_receptacle; random if omitted.
    #[arg(long)]
    template: Option<TaskTemplate>,
    /// Script an object relocation at this tick.
    #[arg(long)]
    relocation_tick: Option<u64>,
    /// Output path; stdout if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct PlannerArgs {
    /// `baseline` or `external:<url or command line>`.
    #[arg(long, env = "R2X_PLANNER", default_value = "baseline")]
    planner: String,
    /// Bearer token for HTTP planners.
    #[arg(long, env = "R2X_PLANNER_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
}

impl PlannerArgs {
    fn backend(&self) -> Result<PlannerBackend> {
        if self.planner == "baseline" {
            return Ok(PlannerBackend::Baseline);
        }
        match self.planner.strip_prefix("external:") {
            Some(spec) if !spec.trim().is_empty() => {
                Ok(PlannerBackend::External(Endpoint::parse(spec).with_api_key(self.api_key.clone())))
            }
            _ => bail!("--planner must be `baseline` or `external:<endpoint>`, got `{}`", self.planner),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    #[arg(long, default_value = "r2x")]
    protocol: Protocol,
    /// Orchestrator settings as JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    t_delay: Option<u64>,
    #[arg(long)]
    p_omit: Option<f64>,
    #[arg(long)]
    p_corrupt: Option<f64>,
    #[arg(long)]
    max_fails: Option<u32>,
    #[arg(long)]
    tick_budget: Option<u64>,
    #[command(flatten)]
    planner: PlannerArgs,
    /// Result path; stdout if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Write the JSON Lines trace here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long, default_value_t = 30)]
    seeds: usize,
    #[arg(short, long)]
    output: PathBuf,
    /// Worker threads; all cores if omitted.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    no_plots: bool,
    #[command(flatten)]
    planner: PlannerArgs,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    /// Per-tick top-down frames.
    #[arg(long)]
    ascii: bool,
}

/// Bad input: exit code 2.
#[derive(Debug)]
struct Usage(anyhow::Error);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| Usage(e).into())
}

fn read(path: &Path) -> Result<String> {
    usage(fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Refuses to overwrite an input.
fn distinct(input: &Path, output: Option<&Path>) -> Result<()> {
    let same = |o: &Path| match (fs::canonicalize(input), fs::canonicalize(o)) {
        (Ok(a), Ok(b)) => a == b,
        _ => input == o,
    };
    if let Some(o) = output.filter(|o| same(o)) {
        return usage(Err(anyhow::anyhow!("output {} would overwrite the input", o.display())));
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<bool> {
    let params = SceneParams {
        rooms: a.rooms,
        room_size: a.room_size,
        object_density: a.density,
        team_size: a.team,
        coverage: a.coverage,
        template: a.template,
        relocation_tick: a.relocation_tick,
    };
    usage(params.validate().map_err(Into::into))?;
    let scenario = generate_scene(&params, a.seed)?;
    emit(a.output.as_deref(), &scenario.to_json())?;
    Ok(true)
}

fn run(a: RunArgs) -> Result<bool> {
    distinct(&a.scenario, a.output.as_deref())?;
    distinct(&a.scenario, a.trace.as_deref())?;
    let mut scenario = usage(
        Scenario::from_json(&read(&a.scenario)?).with_context(|| format!("bad scenario {}", a.scenario.display())),
    )?;
    let mut cfg = match &a.config {
        Some(p) => usage(serde_json::from_str(&read(p)?).with_context(|| format!("bad config {}", p.display())))?,
        None => OrchestratorConfig::default(),
    };
    cfg.protocol = a.protocol;
    if let Some(v) = a.max_fails {
        cfg.max_fails = v;
    }
    if let Some(v) = a.tick_budget {
        cfg.tick_budget = v;
    }
    if let Some(v) = a.t_delay {
        scenario.failure.t_delay = v;
    }
    if let Some(v) = a.p_omit {
        scenario.failure.p_omit = v;
    }
    if let Some(v) = a.p_corrupt {
        scenario.failure.p_corrupt = v;
    }
    usage(scenario.failure.validate().map_err(Into::into))?;
    usage(cfg.validate().map_err(Into::into))?;
    let backend = usage(a.planner.backend())?;
    let mut run = usage(run_episode(&scenario, &cfg, &backend).map_err(Into::into))?;
    if let Some(t) = &a.trace {
        write(t, &run.trace_jsonl())?;
        run.result.trace_path = Some(t.display().to_string());
    }
    emit(a.output.as_deref(), &run.result.to_json())?;
    Ok(run.result.success_truth)
}

fn bench(a: BenchArgs) -> Result<bool> {
    let matrix: Matrix = usage(
        serde_json::from_str(&read(&a.matrix)?).with_context(|| format!("bad matrix {}", a.matrix.display())),
    )?;
    usage(matrix.validate().map_err(Into::into))?;
    if a.seeds == 0 {
        return usage(Err(anyhow::anyhow!("--seeds must be positive")));
    }
    if a.jobs == Some(0) {
        return usage(Err(anyhow::anyhow!("--jobs must be positive")));
    }
    let backend = usage(a.planner.backend())?;
    let result = run_suite(&matrix, a.seeds, &backend, a.jobs)?;
    write_suite(&result, &a.output, !a.no_plots)?;
    let trends = trend_report(&result);
    let mut report = serde_json::to_string_pretty(&trends)?;
    report.push('\n');
    write(&a.output.join("trends.json"), &report)?;

    println!("{:<28} {:>5} {:>8} {:>10} {:>10}", "cell", "runs", "success", "path_m", "tokens");
    for c in &result.aggregates {
        println!(
            "{:<28} {:>5} {:>8.3} {:>10.2} {:>10.0}",
            c.key, c.episodes, c.success_rate, c.avg_path_length_m, c.avg_token_proxy
        );
    }
    for t in trends.iter().filter(|t| !matches!(t.status, TrendStatus::InsufficientData(_))) {
        println!("trend {:<18} {}", t.name, if t.status == TrendStatus::Pass { "pass" } else { "fail" });
    }
    Ok(true)
}

fn replay(a: ReplayArgs) -> Result<bool> {
    let text = read(&a.trace)?;
    let records = usage(parse_jsonl(&text).map_err(|e| anyhow::anyhow!("{}: {e}", a.trace.display())))?;
    if a.ascii {
        print!("{}", usage(render_ascii(&records).map_err(anyhow::Error::msg))?);
    } else {
        println!("{}: {} records", a.trace.display(), records.len());
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let outcome = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::Replay(a) => replay(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
