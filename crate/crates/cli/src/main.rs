use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;
use tomcraft_core::agent::{AgentError, CurriculumRecord};
use tomcraft_core::comm::{EventBus, HumanGate};
use tomcraft_core::gateway::LocalHashEmbedder;
use tomcraft_core::harness::{
    curriculum_report, population_report, read_jsonl, read_memory, read_trials, render_trial,
    report_tech_tree, run_experiment, run_population, run_tech_tree, write_curriculum_run,
    write_experiment_run, write_population_run, ConfiguredFactory, ExperimentFile, ExperimentSpec,
    HarnessError, Hooks, MetricReport, RunFiles, Setting,
};
use tomcraft_core::memory::{MemoryDump, PersistError};
use tomcraft_serve::{Session, API_PREFIX};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_OUTAGE: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "tomcraft",
    version,
    about = "Run and inspect crafting-agent experiments"
)]
struct Cli {
    /// Log filter, e.g. `info` or `tomcraft_core=debug`.
    #[arg(long, global = true, env = "TOMCRAFT_LOG", default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Experiment TOML file.
    config: PathBuf,
    /// Directory that receives `<run_id>/`.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Worker threads; overrides the file.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment file. Curriculum files run the tech tree.
    Run(RunArgs),
    /// Run the peer-to-peer diffusion experiment.
    Population(RunArgs),
    /// Run independent lifelong curricula and tabulate milestones.
    Techtree(RunArgs),
    /// Re-aggregate a run directory, or render one trial.
    Replay {
        run_dir: PathBuf,
        #[arg(long)]
        trial: Option<u32>,
    },
    /// Serve the session API for a human expert, or read-only for a run directory.
    Serve {
        /// Experiment file (live) or run directory (replay).
        source: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Where a live run writes its records.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Print memory snapshots from a run directory or a store directory.
    DumpMemory { path: PathBuf },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_CONFIG,
            CliError::Harness(HarnessError::Config(_) | HarnessError::Parse { .. }) => EXIT_CONFIG,
            CliError::Harness(HarnessError::Agent(e)) if !matches!(e, AgentError::World(_)) => {
                EXIT_CONFIG
            }
            _ => EXIT_FAILURE,
        }
    }
}

/// What a finished command reports back.
enum Outcome {
    Done,
    Incomplete,
}

fn load(args: &RunArgs) -> Result<(ExperimentSpec, ConfiguredFactory), CliError> {
    let file = ExperimentFile::load(&args.config)?;
    let mut spec = file.experiment;
    if args.workers.is_some() {
        spec.workers = args.workers;
    }
    spec.validate()?;
    Ok((spec, ConfiguredFactory::new(&file.backends)?))
}

fn finish(files: &RunFiles, report: &MetricReport) -> Outcome {
    print!("{}", report.to_table());
    println!("records in {}", files.dir.display());
    if report.incomplete {
        Outcome::Incomplete
    } else {
        Outcome::Done
    }
}

fn experiment(args: &RunArgs) -> Result<Outcome, CliError> {
    let (spec, factory) = load(args)?;
    if spec.curriculum {
        return tech_tree(&spec, &factory, &args.out);
    }
    let output = run_experiment(&spec, &factory, &Hooks::default())?;
    let files = write_experiment_run(&args.out, &spec, &output)?;
    Ok(finish(&files, &output.report))
}

fn tech_tree(
    spec: &ExperimentSpec,
    factory: &ConfiguredFactory,
    out: &Path,
) -> Result<Outcome, CliError> {
    let records = run_tech_tree(spec, factory)?;
    let report = curriculum_report(spec, &records, report_tech_tree(&records));
    let files = write_curriculum_run(out, spec, &records, &report)?;
    Ok(finish(&files, &report))
}

fn population(args: &RunArgs) -> Result<Outcome, CliError> {
    let (spec, factory) = load(args)?;
    let record = run_population(&spec, &factory)?;
    let report = population_report(&spec, &record);
    let files = write_population_run(&args.out, &spec, &record, &report)?;
    Ok(finish(&files, &report))
}

fn read_spec(files: &RunFiles) -> Result<ExperimentSpec, CliError> {
    let path = files.spec();
    let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| {
        HarnessError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        }
        .into()
    })
}

fn replay(run_dir: &Path, trial: Option<u32>) -> Result<Outcome, CliError> {
    let files = RunFiles {
        dir: run_dir.to_path_buf(),
    };
    let spec = read_spec(&files)?;
    if let Some(id) = trial {
        let trials = read_trials(&files.trials())?;
        let record = trials
            .iter()
            .find(|t| t.trial_id == id)
            .ok_or_else(|| CliError::Usage(format!("no trial {id} in {}", run_dir.display())))?;
        print!("{}", render_trial(record));
        return Ok(Outcome::Done);
    }
    let report = if files.population().exists() {
        let path = files.population();
        let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let record = serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        population_report(&spec, &record)
    } else if files.curricula().exists() {
        let records: Vec<CurriculumRecord> = read_jsonl(&files.curricula())?;
        curriculum_report(&spec, &records, report_tech_tree(&records))
    } else {
        MetricReport::from_trials(&spec, &read_trials(&files.trials())?)
    };
    print!("{}", report.to_table());
    Ok(if report.incomplete {
        Outcome::Incomplete
    } else {
        Outcome::Done
    })
}

fn dump_memory(path: &Path) -> Result<Outcome, CliError> {
    let run_memory = path.join("memory.jsonl");
    let dumps: Vec<MemoryDump> = if run_memory.exists() {
        read_memory(&run_memory)?
    } else if path.is_file() {
        read_memory(path)?
    } else {
        vec![MemoryDump::read_dir(path, LocalHashEmbedder::handle())?]
    };
    for dump in &dumps {
        println!("{}", serde_json::to_string(dump).expect("dump serializes"));
    }
    Ok(Outcome::Done)
}

fn serve(source: &Path, addr: &str, out: &Path) -> Result<Outcome, CliError> {
    let session = if source.is_dir() {
        let files = RunFiles {
            dir: source.to_path_buf(),
        };
        Session::replay(&read_trials(&files.trials())?)
    } else {
        let file = ExperimentFile::load(source)?;
        let spec = file.experiment;
        if spec.setting != Setting::InstructiveHuman {
            return Err(CliError::Usage(
                "serve runs instructive_human experiments only".into(),
            ));
        }
        let factory = ConfiguredFactory::new(&file.backends)?;
        let bus = EventBus::default();
        let gate = HumanGate::new();
        let session = Session::live(bus.clone(), Some(gate.clone()));
        let out = out.to_path_buf();
        std::thread::spawn(move || {
            let hooks = Hooks {
                bus: Some(bus),
                gate: Some(gate),
                human_timeout: None,
            };
            let result = run_experiment(&spec, &factory, &hooks).and_then(|output| {
                write_experiment_run(&out, &spec, &output).map(|files| (files, output))
            });
            match result {
                Ok((files, output)) => {
                    print!("{}", output.report.to_table());
                    println!("records in {}", files.dir.display());
                }
                Err(e) => tracing::error!(error = %e, "live run failed"),
            }
        });
        session
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on http://{}{API_PREFIX}", listener.local_addr()?);
        tokio::select! {
            served = tomcraft_serve::serve(listener, session) => served,
            _ = tokio::signal::ctrl_c() => Ok(()),
        }
    })?;
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let result = match &cli.command {
        Command::Run(args) => experiment(args),
        Command::Population(args) => population(args),
        Command::Techtree(args) => {
            load(args).and_then(|(spec, factory)| tech_tree(&spec, &factory, &args.out))
        }
        Command::Replay { run_dir, trial } => replay(run_dir, *trial),
        Command::Serve { source, addr, out } => serve(source, addr, out),
        Command::DumpMemory { path } => dump_memory(path),
    };
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Incomplete) => {
            eprintln!("incomplete: a backend outage cut trials short");
            ExitCode::from(EXIT_OUTAGE)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
