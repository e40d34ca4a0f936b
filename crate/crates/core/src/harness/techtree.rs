use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::configure;
use super::{
    thread_pool, AgentFactory, ExperimentSpec, HarnessError, Seat, TrialContext, NOVICE_ID,
};
use crate::agent::{run_curriculum, CurriculumRecord};
use crate::craftworld::{Milestone, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilestoneRow {
    pub milestone: Milestone,
    pub label: String,
    pub reached: usize,
    pub runs: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    /// `"6 ± 2 (3/3)"` or `"N/A (0/3)"`.
    pub cell: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechTreeTable {
    pub rows: Vec<MilestoneRow>,
    pub unique_items: usize,
    pub items: BTreeSet<String>,
}

impl TechTreeTable {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            writeln!(out, "{:<12} {}", row.label, row.cell).expect("write");
        }
        writeln!(out, "{:<12} {}", "Unique items", self.unique_items).expect("write");
        out
    }
}

fn mean_sd(values: &[u32]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values
        .iter()
        .map(|&v| (f64::from(v) - mean).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean ± sample sd over the runs that reached a milestone, both rounded
/// half away from zero, then the reached count.
pub fn format_cell(values: &[u32], runs: usize) -> String {
    if values.is_empty() {
        return format!("N/A (0/{runs})");
    }
    let (mean, sd) = mean_sd(values);
    format!(
        "{} ± {} ({}/{runs})",
        mean.round() as i64,
        sd.round() as i64,
        values.len()
    )
}

pub fn report_tech_tree(records: &[CurriculumRecord]) -> TechTreeTable {
    let runs = records.len();
    let rows = Milestone::ALL
        .iter()
        .map(|&milestone| {
            let values: Vec<u32> = records
                .iter()
                .filter_map(|r| r.milestone(milestone))
                .collect();
            let (mean, sd) = if values.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_sd(&values);
                (Some(m), Some(s))
            };
            MilestoneRow {
                milestone,
                label: milestone.label().to_string(),
                reached: values.len(),
                runs,
                mean,
                sd,
                cell: format_cell(&values, runs),
            }
        })
        .collect();
    let items: BTreeSet<String> = records
        .iter()
        .flat_map(|r| r.items_held.iter().cloned())
        .collect();
    TechTreeTable {
        rows,
        unique_items: items.len(),
        items,
    }
}

/// Independent curriculum runs over the tech-tree task sequence.
pub fn run_tech_tree(
    spec: &ExperimentSpec,
    factory: &dyn AgentFactory,
) -> Result<Vec<CurriculumRecord>, HarnessError> {
    spec.validate()?;
    let tasks = TaskSpec::tech_tree_sequence();
    let one = |run: u32| -> Result<CurriculumRecord, HarnessError> {
        let ctx = TrialContext {
            trial: run,
            seed: spec.seed_for(run),
        };
        let mut agent = factory.build(Seat::Novice, NOVICE_ID, &ctx)?;
        configure(&mut agent, spec);
        let world = spec.scenario_for(run).build(&[NOVICE_ID]);
        let (record, _) =
            run_curriculum(&mut agent, None, world, &tasks, spec.budget, 0, ctx.seed)?;
        Ok(record)
    };
    if spec.workers == Some(1) {
        (0..spec.curriculum_runs).map(one).collect()
    } else {
        thread_pool(spec.workers)?
            .install(|| (0..spec.curriculum_runs).into_par_iter().map(one).collect())
    }
}
