//! `ctxsim` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ctxsim_core::agents::{BackendSpec, LlmEndpointConfig};
use ctxsim_core::config::ConfigDocument;
use ctxsim_core::observation::ExperimentId;
use ctxsim_core::orchestrator::{
    analyze_run_dir, persist_run, plan_run, run, RunConfig, UnitPlan, REPORT_JSON_FILE,
    REPORT_TABLE_FILE,
};
use ctxsim_core::prompt::PromptDesign;
use ctxsim_core::stats::{compare_reports, AnalysisReport, VerdictThresholds};

const EXIT_HELP: &str = "\
Exit codes:
  0  success (hypothesis failures in a report are findings, not errors)
  1  usage, configuration or analysis error
  2  run finished with incomplete units (listed in manifest.json)";

#[derive(Parser, Debug)]
#[command(name = "ctxsim", version, about = "Simulated-subject replications of economics experiments", after_help = EXIT_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Execute a run and write runs/<run_id>/{manifest.json, transcripts.jsonl}
    #[command(after_help = EXIT_HELP)]
    Run(RunArgs),
    /// Analyze a run directory and write report.json and report.txt
    #[command(after_help = EXIT_HELP)]
    Analyze(AnalyzeArgs),
    /// Combine reports into a design-by-backend verdict matrix
    #[command(after_help = EXIT_HELP)]
    Report(ReportArgs),
    /// Check configuration documents without running them
    #[command(after_help = EXIT_HELP)]
    ValidateConfig {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// List experiments, default sample plans and oracle backends
    ListExperiments,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// JSON configuration document; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<ExperimentId>,
    #[arg(long)]
    design: Option<PromptDesign>,
    /// oracle-ev, oracle-bayes, oracle-crowdfund, oracle-reservation, llm or fixture:<path>
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism)
    #[arg(long)]
    workers: Option<usize>,
    /// Parent directory of the run directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace an existing run directory
    #[arg(long)]
    force: bool,
    /// Model name for the llm backend
    #[arg(long)]
    model: Option<String>,
    /// OpenAI-compatible base URL for the llm backend
    #[arg(long)]
    base_url: Option<String>,
    /// Environment variable holding the API key for the llm backend
    #[arg(long)]
    api_key_env: Option<String>,
}

#[derive(clap::Args, Debug)]
struct AnalyzeArgs {
    /// Run directory containing transcripts.jsonl
    dir: PathBuf,
    /// Directory for report files (default: the run directory)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
    /// What to print on stdout
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
}

#[derive(clap::Args, Debug)]
struct ReportArgs {
    /// report.json files or directories containing one
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write to a file instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Report(args) => cmd_report(args),
        Command::ValidateConfig { paths } => cmd_validate_config(&paths),
        Command::ListExperiments => {
            cmd_list_experiments();
            Ok(0)
        }
    }
}

fn resolve_backend(args: &RunArgs, from_config: Option<BackendSpec>) -> Result<BackendSpec> {
    let llm_flags = args.model.is_some() || args.base_url.is_some() || args.api_key_env.is_some();
    let mut spec = match args.backend.as_deref() {
        Some("llm") => {
            let (Some(base_url), Some(model)) = (&args.base_url, &args.model) else {
                bail!("--backend llm needs --base-url and --model");
            };
            BackendSpec::Llm {
                endpoint: LlmEndpointConfig::new(base_url.clone(), model.clone()),
            }
        }
        Some(name) => BackendSpec::from_name(name)?,
        None => from_config.ok_or_else(|| anyhow!("--backend is required without --config"))?,
    };
    if let BackendSpec::Llm { endpoint } = &mut spec {
        if let Some(m) = &args.model {
            endpoint.model = m.clone();
        }
        if let Some(u) = &args.base_url {
            endpoint.base_url = u.clone();
        }
        if let Some(k) = &args.api_key_env {
            endpoint.api_key_env = k.clone();
        }
    } else if llm_flags {
        bail!("--model, --base-url and --api-key-env apply only to the llm backend");
    }
    Ok(spec)
}

fn cmd_run(args: RunArgs) -> Result<u8> {
    let (mut config, mut out_root, mut workers) = match &args.config {
        Some(path) => {
            let doc = ConfigDocument::load(path)?;
            let base = path.parent().unwrap_or(Path::new("."));
            (Some(doc.run_config(base)), Some(doc.output_dir(base)), doc.workers)
        }
        None => (None, None, None),
    };
    let backend = resolve_backend(&args, config.as_ref().map(|c| c.backend.clone()))?;
    let mut cfg = match config.take() {
        Some(c) => c,
        None => {
            let experiment = args
                .experiment
                .ok_or_else(|| anyhow!("--experiment is required without --config"))?;
            RunConfig::new(experiment, PromptDesign::Baseline, backend.clone(), 0)
        }
    };
    cfg.backend = backend;
    if let Some(e) = args.experiment {
        cfg.experiment = e;
    }
    if let Some(d) = args.design {
        cfg.design = d;
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = args.out {
        out_root = Some(o);
    }
    if let Some(w) = args.workers {
        workers = Some(w);
    }
    if workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out_root = out_root.unwrap_or_else(|| PathBuf::from("runs"));

    let units: Vec<UnitPlan> = plan_run(&cfg)?;
    let run_dir = out_root.join(cfg.run_id());
    if run_dir.exists() && !args.force {
        bail!("{} already exists (use --force to overwrite)", run_dir.display());
    }
    eprintln!(
        "running {} ({} units, {} workers) into {}",
        cfg.run_id(),
        units.len(),
        workers,
        run_dir.display()
    );
    let outcome = run(&cfg, workers)?;
    let dir = persist_run(&out_root, &outcome, args.force)?;
    let m = &outcome.manifest;
    println!(
        "{}: {} records, {} invalid, {}/{} units complete",
        dir.display(),
        m.records_written,
        m.invalid_decisions,
        m.units_completed,
        m.units_planned
    );
    if m.is_complete() {
        Ok(0)
    } else {
        for u in &m.incomplete_units {
            eprintln!("incomplete unit {} ({}): {}", u.index, u.label, u.error);
        }
        Ok(2)
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<u8> {
    if !args.dir.is_dir() {
        bail!("{} is not a directory", args.dir.display());
    }
    let report = analyze_run_dir(&args.dir, VerdictThresholds::default())?;
    let out = args.out.unwrap_or_else(|| args.dir.clone());
    let json_path = out.join(REPORT_JSON_FILE);
    let table_path = out.join(REPORT_TABLE_FILE);
    if !args.force && (json_path.exists() || table_path.exists()) {
        bail!("{} already exists (use --force to overwrite)", json_path.display());
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    let table = report.to_table();
    std::fs::write(&json_path, &json).with_context(|| format!("writing {}", json_path.display()))?;
    std::fs::write(&table_path, &table).with_context(|| format!("writing {}", table_path.display()))?;
    match args.format {
        Format::Json => print!("{json}"),
        Format::Table | Format::Csv => print!("{table}"),
    }
    Ok(0)
}

fn load_report(path: &Path) -> Result<AnalysisReport> {
    let file = if path.is_dir() { path.join(REPORT_JSON_FILE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", file.display()))
}

fn cmd_report(args: ReportArgs) -> Result<u8> {
    let reports = args.reports.iter().map(|p| load_report(p)).collect::<Result<Vec<_>>>()?;
    let comparison = compare_reports(&reports)?;
    let text = match args.format {
        Format::Table => comparison.to_table(),
        Format::Csv => comparison.to_csv(),
        Format::Json => serde_json::to_string_pretty(&comparison)? + "\n",
    };
    match args.out {
        Some(path) => {
            if path.exists() && !args.force {
                bail!("{} already exists (use --force to overwrite)", path.display());
            }
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_validate_config(paths: &[PathBuf]) -> Result<u8> {
    let mut failed = 0;
    for path in paths {
        match ConfigDocument::load(path) {
            Ok(_) => println!("ok: {}", path.display()),
            Err(e) => {
                eprintln!("invalid: {e}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} configuration(s) invalid", paths.len());
    }
    Ok(0)
}

fn cmd_list_experiments() {
    for experiment in ExperimentId::ALL {
        let cfg = RunConfig::new(experiment, PromptDesign::Baseline, BackendSpec::OracleEv, 0);
        let plan = &cfg.sample_plan;
        let (units, oracle) = match experiment {
            ExperimentId::Queue => (
                format!(
                    "{} + {} cohorts of 4",
                    plan.queue.cohorts_q00, plan.queue.cohorts_q50
                ),
                "oracle-ev, oracle-bayes",
            ),
            ExperimentId::Crowdfund => (
                format!(
                    "{} groups of {} per condition, {} rounds",
                    plan.crowdfund.groups_per_condition, plan.crowdfund.group_size, plan.crowdfund.rounds
                ),
                "oracle-crowdfund",
            ),
            ExperimentId::Demand => (
                format!(
                    "{} products x {} levels x {} decisions",
                    plan.demand.products, plan.demand.levels, plan.demand.decisions_per_cell
                ),
                "oracle-reservation",
            ),
        };
        println!("{experiment:<10} {}", experiment.description());
        println!("{:<10} default plan: {units}", "");
        println!("{:<10} oracles: {oracle}; also llm, fixture:<path>", "");
    }
}
