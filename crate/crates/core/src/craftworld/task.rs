use serde::{Deserialize, Serialize};

use super::items::{self, Milestone};
use super::world::{WorldError, WorldState};

/// Goal predicates registered with the world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case")]
pub enum Goal {
    /// Inventory holds at least `count` of `item` (`wood_log` counts any log).
    Collect { item: String, count: u32 },
    /// `station` is placed at the agent's locale.
    Place { station: String },
}

impl Goal {
    pub fn holds(&self, world: &WorldState, agent_id: &str) -> Result<bool, WorldError> {
        Ok(self.progress(world, agent_id)?.0)
    }

    /// Whether the goal holds, with a short statement of the current amount.
    pub fn progress(
        &self,
        world: &WorldState,
        agent_id: &str,
    ) -> Result<(bool, String), WorldError> {
        let agent = world.agent(agent_id)?;
        Ok(match self {
            Goal::Collect { item, count } => {
                let have = held(&agent.inventory, item);
                (
                    have >= *count,
                    format!("inventory has {have}/{count} {item}"),
                )
            }
            Goal::Place { station } => {
                let placed = world
                    .placed
                    .get(&agent.position)
                    .is_some_and(|s| s.contains(station));
                (
                    placed,
                    if placed {
                        format!("{station} is placed")
                    } else {
                        format!("no {station} placed")
                    },
                )
            }
        })
    }

    pub fn target(&self) -> &str {
        match self {
            Goal::Collect { item, .. } => item,
            Goal::Place { station } => station,
        }
    }
}

fn held(inventory: &super::Multiset, item: &str) -> u32 {
    if item == items::LOG_TAG {
        items::LOGS.iter().map(|l| inventory.count(l)).sum()
    } else {
        inventory.count(item)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub goal: Goal,
    pub canonical_question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub milestone: Option<Milestone>,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, goal: Goal) -> Self {
        let name = name.into();
        let canonical_question = question_for(&name);
        Self {
            name,
            goal,
            canonical_question,
            milestone: None,
        }
    }

    pub fn collect(name: impl Into<String>, item: &str, count: u32) -> Self {
        Self::new(
            name,
            Goal::Collect {
                item: item.to_string(),
                count,
            },
        )
    }

    pub fn with_milestone(mut self, milestone: Milestone) -> Self {
        self.milestone = Some(milestone);
        self
    }

    pub fn mine_dirt() -> Self {
        Self::collect("Mine 1 dirt", "dirt", 1)
    }

    pub fn mine_wood() -> Self {
        Self::collect("Mine 1 wood log", items::LOG_TAG, 1)
    }

    pub fn mine_iron() -> Self {
        Self::collect("Mine 1 iron ore", "iron_ore", 1)
    }

    pub fn craft_pickaxe() -> Self {
        Self::collect("Craft 1 wooden pickaxe", "wooden_pickaxe", 1)
            .with_milestone(Milestone::WoodenTool)
    }

    /// Tasks addressable by a short id in experiment files.
    pub fn by_id(id: &str) -> Option<Self> {
        match id {
            "mine_dirt" | "dirt" => Some(Self::mine_dirt()),
            "mine_wood" | "wood" => Some(Self::mine_wood()),
            "mine_iron" => Some(Self::mine_iron()),
            "craft_pickaxe" => Some(Self::craft_pickaxe()),
            _ => None,
        }
    }

    /// The milestone-ordered tool progression used for lifelong runs.
    pub fn tech_tree_sequence() -> Vec<TaskSpec> {
        vec![
            Self::collect("Mine 3 wood log", items::LOG_TAG, 3),
            Self::new(
                "Place 1 crafting table",
                Goal::Place {
                    station: "crafting_table".into(),
                },
            ),
            Self::collect("Craft 1 wooden pickaxe", "wooden_pickaxe", 1)
                .with_milestone(Milestone::WoodenTool),
            Self::collect("Mine 3 stone", "stone", 3),
            Self::collect("Craft 1 stone pickaxe", "stone_pickaxe", 1)
                .with_milestone(Milestone::StoneTool),
            Self::collect("Mine 8 stone", "stone", 8),
            Self::new(
                "Place 1 furnace",
                Goal::Place {
                    station: "furnace".into(),
                },
            ),
            Self::collect("Mine 3 iron ore", "iron_ore", 3),
            Self::collect("Smelt 3 iron ingot", "iron_ingot", 3),
            Self::collect("Craft 1 iron pickaxe", "iron_pickaxe", 1)
                .with_milestone(Milestone::IronTool),
        ]
    }
}

/// `"Mine 1 wood log"` becomes `"How to mine 1 wood log in Minecraft?"`.
pub fn question_for(task_name: &str) -> String {
    let mut chars = task_name.trim().chars();
    let lowered = match chars.next() {
        Some(first) => first.to_lowercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    };
    format!("How to {lowered} in Minecraft?")
}
