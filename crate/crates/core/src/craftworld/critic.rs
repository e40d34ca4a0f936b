//! Rule-based critic: the ground-truth judge of a task attempt.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::task::TaskSpec;
use super::world::{ExecutionTrace, WorldError, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticVerdict {
    pub success: bool,
    pub message: String,
    pub inventory_delta: BTreeMap<String, i64>,
}

impl CriticVerdict {
    pub fn failure(message: impl Into<String>) -> Self {
        Self {
            success: false,
            message: message.into(),
            inventory_delta: BTreeMap::new(),
        }
    }
}

/// Success iff the task's goal predicate holds on `after`. The message is
/// templated from the predicate and the trace's primitive failures.
pub fn judge(
    before: &WorldState,
    after: &WorldState,
    agent_id: &str,
    task: &TaskSpec,
    trace: &ExecutionTrace,
) -> Result<CriticVerdict, WorldError> {
    let inventory_delta = after
        .agent(agent_id)?
        .inventory
        .diff(&before.agent(agent_id)?.inventory);
    let (success, progress) = task.goal.progress(after, agent_id)?;
    let message = if success {
        format!("Task \"{}\" succeeded: {progress}.", task.name)
    } else {
        let mut msg = format!("Task \"{}\" failed: {progress}.", task.name);
        let failures: Vec<String> = trace
            .failures()
            .map(|s| {
                format!(
                    "step {} `{}`: {}",
                    s.index + 1,
                    s.primitive,
                    s.failure.as_ref().expect("failed step")
                )
            })
            .collect();
        if !failures.is_empty() {
            msg.push_str(" Failed steps: ");
            msg.push_str(&failures.join("; "));
            msg.push('.');
        }
        msg
    };
    Ok(CriticVerdict {
        success,
        message,
        inventory_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::craftworld::{parse_script, Scenario, TaskSpec};

    fn attempt(world: &WorldState, task: &TaskSpec, src: &str) -> CriticVerdict {
        let (after, trace) = world.execute("a", &parse_script(src).unwrap()).unwrap();
        judge(world, &after, "a", task, &trace).unwrap()
    }

    #[test]
    fn dirt_success() {
        let w = Scenario::plains_day(1).build(&["a"]);
        let v = attempt(&w, &TaskSpec::mine_dirt(), "mine dirt");
        assert!(v.success);
        assert_eq!(v.inventory_delta.get("dirt"), Some(&1));
    }

    #[test]
    fn night_failure_mentions_night() {
        let w = Scenario::dark_forest_night(1).build(&["a"]);
        let v = attempt(&w, &TaskSpec::mine_wood(), "mine dark_oak_log");
        assert!(!v.success);
        assert!(v.message.contains("night"), "{}", v.message);
        assert!(v.inventory_delta.is_empty());
    }

    #[test]
    fn milestone_item_present() {
        let mut w = Scenario::plains_day(1).build(&["a"]);
        w.placed
            .entry("home".into())
            .or_default()
            .insert("crafting_table".into());
        w.agents
            .get_mut("a")
            .unwrap()
            .inventory
            .add("wooden_plank", 3);
        w.agents.get_mut("a").unwrap().inventory.add("stick", 2);
        let v = attempt(&w, &TaskSpec::craft_pickaxe(), "craft wooden_pickaxe");
        assert!(v.success);
        assert_eq!(
            TaskSpec::craft_pickaxe().milestone,
            Some(crate::craftworld::Milestone::WoodenTool)
        );
    }
}
