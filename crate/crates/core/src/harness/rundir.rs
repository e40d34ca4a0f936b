use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{
    ExperimentOutput, ExperimentSpec, HarnessError, MetricReport, PopulationRecord, TechTreeTable,
};
use crate::agent::{CurriculumRecord, ScheduleStep, TrialRecord};
use crate::memory::MemoryDump;

/// File names inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(root: &Path, run_id: &str) -> Self {
        Self {
            dir: root.join(run_id),
        }
    }
    pub fn spec(&self) -> PathBuf {
        self.dir.join("spec.json")
    }
    pub fn report_json(&self) -> PathBuf {
        self.dir.join("report.json")
    }
    pub fn report_table(&self) -> PathBuf {
        self.dir.join("report.txt")
    }
    pub fn curve(&self) -> PathBuf {
        self.dir.join("curve.tsv")
    }
    pub fn trials(&self) -> PathBuf {
        self.dir.join("trials.jsonl")
    }
    pub fn curricula(&self) -> PathBuf {
        self.dir.join("curricula.jsonl")
    }
    pub fn population(&self) -> PathBuf {
        self.dir.join("population.json")
    }
    pub fn memory(&self) -> PathBuf {
        self.dir.join("memory.jsonl")
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(io(path))
}

fn lines<T: serde::Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

fn prepare(root: &Path, spec: &ExperimentSpec) -> Result<RunFiles, HarnessError> {
    let files = RunFiles::new(root, &spec.run_id);
    std::fs::create_dir_all(&files.dir).map_err(io(&files.dir))?;
    write(
        &files.spec(),
        &serde_json::to_string_pretty(spec).expect("spec serializes"),
    )?;
    Ok(files)
}

fn write_report(files: &RunFiles, report: &MetricReport) -> Result<(), HarnessError> {
    write(&files.report_json(), &report.to_json())?;
    write(&files.report_table(), &report.to_table())?;
    write(&files.curve(), &report.curve_tsv())
}

pub fn write_experiment_run(
    root: &Path,
    spec: &ExperimentSpec,
    output: &ExperimentOutput,
) -> Result<RunFiles, HarnessError> {
    let files = prepare(root, spec)?;
    write(&files.trials(), &lines(&output.trials))?;
    write(&files.memory(), &lines(&output.memory))?;
    write_report(&files, &output.report)?;
    Ok(files)
}

pub fn write_curriculum_run(
    root: &Path,
    spec: &ExperimentSpec,
    records: &[CurriculumRecord],
    report: &MetricReport,
) -> Result<RunFiles, HarnessError> {
    let files = prepare(root, spec)?;
    write(&files.curricula(), &lines(records))?;
    let trials: Vec<&TrialRecord> = records.iter().flat_map(|r| r.trials.iter()).collect();
    write(&files.trials(), &lines(&trials))?;
    let memory: Vec<&MemoryDump> = records.iter().map(|r| &r.memory).collect();
    write(&files.memory(), &lines(&memory))?;
    write_report(&files, report)?;
    Ok(files)
}

pub fn write_population_run(
    root: &Path,
    spec: &ExperimentSpec,
    record: &PopulationRecord,
    report: &MetricReport,
) -> Result<RunFiles, HarnessError> {
    let files = prepare(root, spec)?;
    write(
        &files.population(),
        &serde_json::to_string_pretty(record).expect("record serializes"),
    )?;
    write_report(&files, report)?;
    Ok(files)
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRecord>, HarnessError> {
    read_jsonl(path)
}

/// One store snapshot per line, as written next to the trial records.
pub fn read_memory(path: &Path) -> Result<Vec<MemoryDump>, HarnessError> {
    read_jsonl(path)
}

/// Records from a line-delimited JSON file; blank lines are skipped.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Parse {
                path: format!("{}:{}", path.display(), i + 1),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Prompts, completions, verdicts and chat of one trial in schedule order.
pub fn render_trial(record: &TrialRecord) -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(
        w,
        "trial {}  task {:?}  seed {}  outcome {:?}",
        record.trial_id, record.task, record.seed, record.outcome
    )
    .expect("write");
    for step in &record.schedule {
        match *step {
            ScheduleStep::Attempt(i) => {
                let Some(a) = record.attempts.iter().find(|a| a.attempt == i) else {
                    continue;
                };
                writeln!(
                    w,
                    "\n== attempt {i} (tick {} -> {}) ==",
                    a.tick_before, a.tick_after
                )
                .expect("write");
                writeln!(w, "--- prompt ---\n{}", a.context).expect("write");
                if let Some(c) = &a.completion {
                    writeln!(w, "--- completion ---\n{c}").expect("write");
                }
                writeln!(w, "--- verdict ---\n{}", a.verdict.message).expect("write");
            }
            ScheduleStep::Round(i) => {
                let Some(r) = record.rounds.iter().find(|r| r.round_index == i) else {
                    continue;
                };
                let closed = if r.force_closed {
                    " (force-closed)"
                } else {
                    ""
                };
                writeln!(w, "\n== round {i}{closed} ==").expect("write");
                for m in &r.messages {
                    writeln!(w, "[{}] {}: {}", m.turn_index, m.sender, m.content).expect("write");
                }
            }
        }
    }
    out
}

/// Report for a set of curriculum runs.
pub fn curriculum_report(
    spec: &ExperimentSpec,
    records: &[CurriculumRecord],
    table: TechTreeTable,
) -> MetricReport {
    let trials: Vec<TrialRecord> = records
        .iter()
        .flat_map(|r| r.trials.iter().cloned())
        .collect();
    let mut report = MetricReport::from_trials(spec, &trials);
    report.incomplete |= records.iter().any(|r| r.outage);
    report.tech_tree = Some(table);
    report
}

/// Report for a population run: the curve, with no per-trial records.
pub fn population_report(spec: &ExperimentSpec, record: &PopulationRecord) -> MetricReport {
    let mut report = MetricReport::from_trials(spec, &[]);
    report.trials = record.pool_size;
    report.completed_trials = record.pool_size;
    report.incomplete = record.outage;
    report.population_curve = Some(record.curve.clone());
    report
}
