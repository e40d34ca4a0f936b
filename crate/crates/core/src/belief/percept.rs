use std::fmt;

use serde::{Deserialize, Serialize};

use crate::craftworld::Multiset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeOfDay {
    Day,
    Night,
}

impl fmt::Display for TimeOfDay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeOfDay::Day => "day",
            TimeOfDay::Night => "night",
        })
    }
}

/// What an agent senses through the simulator API at one tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Percept {
    pub biome: String,
    pub time_of_day: TimeOfDay,
    pub tick: u64,
    pub nearby_resources: Multiset,
    pub inventory: Multiset,
    pub last_feedback: Option<String>,
}

impl Percept {
    /// Entity ids present in this percept, plus the biome and time words.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut v = vec![self.biome.clone(), self.time_of_day.to_string()];
        v.extend(self.nearby_resources.items().map(str::to_string));
        v.extend(self.inventory.items().map(str::to_string));
        v
    }

    /// Multi-line observation block used in prompts.
    pub fn render(&self) -> String {
        let mut out = format!(
            "Biome: {}\nTime: {} (tick {})\nNearby resources: {}\nInventory: {}",
            self.biome, self.time_of_day, self.tick, self.nearby_resources, self.inventory
        );
        if let Some(fb) = &self.last_feedback {
            out.push_str(&format!("\nLast feedback: {fb}"));
        }
        out
    }
}
