//! World state and the script interpreter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dsl::{ActionScript, Primitive, Verb};
use super::items::{self, Ingredient};
use super::Multiset;
use crate::belief::{Percept, TimeOfDay};

/// Ticks per day/night cycle; ticks `0..DAYLIGHT_TICKS` of each cycle are day.
pub const CYCLE_TICKS: u64 = 12;
pub const DAYLIGHT_TICKS: u64 = 7;

pub fn time_of_day(tick: u64) -> TimeOfDay {
    if tick % CYCLE_TICKS < DAYLIGHT_TICKS {
        TimeOfDay::Day
    } else {
        TimeOfDay::Night
    }
}

pub const HOME_LOCALE: &str = "home";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Biome {
    Plains,
    Forest,
    DarkForest,
    Desert,
    Mountains,
}

impl Biome {
    pub fn id(self) -> &'static str {
        match self {
            Biome::Plains => "plains",
            Biome::Forest => "forest",
            Biome::DarkForest => "dark_forest",
            Biome::Desert => "desert",
            Biome::Mountains => "mountains",
        }
    }

    pub fn all() -> [Biome; 5] {
        [
            Biome::Plains,
            Biome::Forest,
            Biome::DarkForest,
            Biome::Desert,
            Biome::Mountains,
        ]
    }

    /// Resources always present, and resources present on some rolls.
    fn resource_table(self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            Biome::Plains => (&["dirt", "oak_log", "stone", "iron_ore"], &["sand"]),
            Biome::Forest => (&["dirt", "oak_log", "stone"], &["iron_ore"]),
            Biome::DarkForest => (&["dirt", "dark_oak_log", "stone"], &["iron_ore"]),
            Biome::Desert => (&["sand", "stone"], &["iron_ore"]),
            Biome::Mountains => (&["dirt", "stone", "iron_ore"], &["oak_log"]),
        }
    }
}

impl fmt::Display for Biome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl std::str::FromStr for Biome {
    type Err = WorldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Biome::all()
            .into_iter()
            .find(|b| b.id() == s)
            .ok_or_else(|| WorldError::UnknownBiome(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("unknown agent: {0}")]
    UnknownAgent(String),
    #[error("unknown biome: {0}")]
    UnknownBiome(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentState {
    pub inventory: Multiset,
    pub position: String,
    pub last_feedback: Option<String>,
    /// Every item id ever held.
    pub items_seen: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    pub seed: u64,
    pub tick: u64,
    pub biome: Biome,
    /// Tick of the last `explore`; keys the resource roll.
    pub explore_roll: u64,
    pub agents: BTreeMap<String, AgentState>,
    pub placed: BTreeMap<String, BTreeSet<String>>,
}

/// Why one primitive had no effect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimitiveFailure {
    #[error("resource unreachable at night: {resource}")]
    UnreachableAtNight { resource: String },
    #[error("resource not reachable here: no {resource} in {biome}")]
    NotReachable { resource: String, biome: String },
    #[error("tool required: mining {resource} needs a {tool}")]
    ToolRequired { resource: String, tool: String },
    #[error("cannot mine {item}: not a raw resource")]
    CannotMine { item: String },
    #[error("no such recipe: {item} cannot be crafted")]
    NoRecipe { item: String },
    #[error("station required: {station}")]
    StationRequired { station: String },
    #[error("missing ingredients: need {need} {item}, have {have}")]
    MissingIngredients { item: String, need: u32, have: u32 },
    #[error("cannot smelt {item}")]
    CannotSmelt { item: String },
    #[error("cannot place {item}: not a station")]
    NotPlaceable { item: String },
    #[error("not in inventory: {item}")]
    NotInInventory { item: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub index: usize,
    pub primitive: Primitive,
    pub tick: u64,
    pub failure: Option<PrimitiveFailure>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub agent: String,
    pub steps: Vec<StepOutcome>,
}

impl ExecutionTrace {
    pub fn failures(&self) -> impl Iterator<Item = &StepOutcome> {
        self.steps.iter().filter(|s| s.failure.is_some())
    }
}

fn mix_seed(seed: u64, biome: Biome, roll: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed
        .to_le_bytes()
        .iter()
        .chain(biome.id().as_bytes())
        .chain(&roll.to_le_bytes())
    {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl WorldState {
    pub fn new(seed: u64, biome: Biome) -> Self {
        Self {
            seed,
            tick: 0,
            biome,
            explore_roll: 0,
            agents: BTreeMap::new(),
            placed: BTreeMap::new(),
        }
    }

    pub fn at_tick(mut self, tick: u64) -> Self {
        self.tick = tick;
        self
    }

    pub fn with_agent(mut self, agent_id: &str) -> Self {
        self.add_agent(agent_id);
        self
    }

    pub fn add_agent(&mut self, agent_id: &str) {
        self.agents
            .entry(agent_id.to_string())
            .or_insert_with(|| AgentState {
                position: HOME_LOCALE.to_string(),
                ..AgentState::default()
            });
    }

    pub fn agent(&self, agent_id: &str) -> Result<&AgentState, WorldError> {
        self.agents
            .get(agent_id)
            .ok_or_else(|| WorldError::UnknownAgent(agent_id.to_string()))
    }

    fn agent_mut(&mut self, agent_id: &str) -> Result<&mut AgentState, WorldError> {
        self.agents
            .get_mut(agent_id)
            .ok_or_else(|| WorldError::UnknownAgent(agent_id.to_string()))
    }

    pub fn time_of_day(&self) -> TimeOfDay {
        time_of_day(self.tick)
    }

    /// Resource counts available ignoring the time of day.
    pub fn resources_present(&self) -> Multiset {
        let (common, rare) = self.biome.resource_table();
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, self.biome, self.explore_roll));
        let mut out = Multiset::new();
        for res in common {
            out.add(res, rng.gen_range(2..=6));
        }
        for res in rare {
            if rng.gen_bool(0.5) {
                out.add(res, rng.gen_range(1..=3));
            }
        }
        out
    }

    /// Resources an agent can reach right now.
    pub fn reachable(&self) -> Multiset {
        let night = self.time_of_day() == TimeOfDay::Night;
        self.resources_present()
            .iter()
            .filter(|(r, _)| !(night && items::night_blocked(r)))
            .collect()
    }

    pub fn set_feedback(
        &mut self,
        agent_id: &str,
        feedback: impl Into<String>,
    ) -> Result<(), WorldError> {
        self.agent_mut(agent_id)?.last_feedback = Some(feedback.into());
        Ok(())
    }

    pub fn snapshot_percept(&self, agent_id: &str) -> Result<Percept, WorldError> {
        let agent = self.agent(agent_id)?;
        Ok(Percept {
            biome: self.biome.id().to_string(),
            time_of_day: self.time_of_day(),
            tick: self.tick,
            nearby_resources: self.reachable(),
            inventory: agent.inventory.clone(),
            last_feedback: agent.last_feedback.clone(),
        })
    }

    /// Apply every primitive in order. Individual failures are recorded in
    /// the trace and never abort the rest of the script.
    pub fn execute(
        &self,
        agent_id: &str,
        script: &ActionScript,
    ) -> Result<(WorldState, ExecutionTrace), WorldError> {
        let mut world = self.clone();
        world.agent(agent_id)?;
        let mut trace = ExecutionTrace {
            agent: agent_id.to_string(),
            steps: Vec::new(),
        };
        for (index, primitive) in script.primitives.iter().enumerate() {
            let tick = world.tick;
            let failure = world.apply(agent_id, primitive).err();
            let agent = world.agent_mut(agent_id)?;
            let held: Vec<String> = agent.inventory.items().map(str::to_string).collect();
            agent.items_seen.extend(held);
            trace.steps.push(StepOutcome {
                index,
                primitive: primitive.clone(),
                tick,
                failure,
            });
        }
        Ok((world, trace))
    }

    fn apply(&mut self, agent_id: &str, primitive: &Primitive) -> Result<(), PrimitiveFailure> {
        let result = match primitive.verb {
            Verb::Mine => self.mine(agent_id, primitive.target().unwrap_or_default()),
            Verb::Craft => self.craft(agent_id, primitive.target().unwrap_or_default()),
            Verb::Smelt => self.smelt(agent_id, primitive.target().unwrap_or_default()),
            Verb::Place => self.place(agent_id, primitive.target().unwrap_or_default()),
            Verb::WaitUntilDay => {
                self.tick = (self.tick / CYCLE_TICKS + 1) * CYCLE_TICKS;
                return Ok(());
            }
            Verb::Explore => {
                self.explore_roll = self.tick;
                Ok(())
            }
        };
        self.tick += 1;
        result
    }

    fn inventory(&mut self, agent_id: &str) -> &mut Multiset {
        &mut self
            .agents
            .get_mut(agent_id)
            .expect("agent checked before apply")
            .inventory
    }

    fn locale(&self, agent_id: &str) -> String {
        self.agents
            .get(agent_id)
            .map(|a| a.position.clone())
            .unwrap_or_else(|| HOME_LOCALE.to_string())
    }

    fn mine(&mut self, agent_id: &str, target: &str) -> Result<(), PrimitiveFailure> {
        let present = self.resources_present();
        let resource = if target == items::LOG_TAG {
            items::LOGS
                .iter()
                .find(|l| present.count(l) > 0)
                .copied()
                .unwrap_or("oak_log")
                .to_string()
        } else {
            target.to_string()
        };
        if !items::is_resource(&resource) {
            return Err(PrimitiveFailure::CannotMine { item: resource });
        }
        if present.count(&resource) == 0 {
            return Err(PrimitiveFailure::NotReachable {
                resource,
                biome: self.biome.id().to_string(),
            });
        }
        if self.time_of_day() == TimeOfDay::Night && items::night_blocked(&resource) {
            return Err(PrimitiveFailure::UnreachableAtNight { resource });
        }
        let tools = items::tools_for(&resource);
        let inventory = self.inventory(agent_id);
        if !tools.is_empty() && !tools.iter().any(|t| inventory.count(t) > 0) {
            return Err(PrimitiveFailure::ToolRequired {
                resource,
                tool: tools[0].to_string(),
            });
        }
        inventory.add(&resource, 1);
        Ok(())
    }

    fn craft(&mut self, agent_id: &str, item: &str) -> Result<(), PrimitiveFailure> {
        let recipe = items::recipe_for(item).ok_or_else(|| PrimitiveFailure::NoRecipe {
            item: item.to_string(),
        })?;
        if let Some(station) = recipe.station {
            let locale = self.locale(agent_id);
            if !self
                .placed
                .get(&locale)
                .is_some_and(|s| s.contains(station))
            {
                return Err(PrimitiveFailure::StationRequired {
                    station: station.to_string(),
                });
            }
        }
        let inventory = self.inventory(agent_id);
        for &(ingredient, need) in recipe.ingredients {
            let have = match ingredient {
                Ingredient::Item(id) => inventory.count(id),
                Ingredient::AnyLog => items::LOGS.iter().map(|l| inventory.count(l)).sum(),
            };
            if have < need {
                return Err(PrimitiveFailure::MissingIngredients {
                    item: ingredient.label().to_string(),
                    need,
                    have,
                });
            }
        }
        for &(ingredient, need) in recipe.ingredients {
            match ingredient {
                Ingredient::Item(id) => {
                    inventory.remove(id, need);
                }
                Ingredient::AnyLog => {
                    let mut left = need;
                    for log in items::LOGS {
                        let take = left.min(inventory.count(log));
                        inventory.remove(log, take);
                        left -= take;
                    }
                }
            }
        }
        inventory.add(recipe.output, recipe.yield_count);
        Ok(())
    }

    fn smelt(&mut self, agent_id: &str, input: &str) -> Result<(), PrimitiveFailure> {
        let recipe =
            items::smelt_recipe_for(input).ok_or_else(|| PrimitiveFailure::CannotSmelt {
                item: input.to_string(),
            })?;
        let locale = self.locale(agent_id);
        if !self
            .placed
            .get(&locale)
            .is_some_and(|s| s.contains(recipe.station))
        {
            return Err(PrimitiveFailure::StationRequired {
                station: recipe.station.to_string(),
            });
        }
        let inventory = self.inventory(agent_id);
        for id in [recipe.input, recipe.fuel] {
            if inventory.count(id) == 0 {
                return Err(PrimitiveFailure::MissingIngredients {
                    item: id.to_string(),
                    need: 1,
                    have: 0,
                });
            }
        }
        inventory.remove(recipe.input, 1);
        inventory.remove(recipe.fuel, 1);
        inventory.add(recipe.output, 1);
        Ok(())
    }

    fn place(&mut self, agent_id: &str, item: &str) -> Result<(), PrimitiveFailure> {
        if !items::is_station(item) {
            return Err(PrimitiveFailure::NotPlaceable {
                item: item.to_string(),
            });
        }
        if !self.inventory(agent_id).remove(item, 1) {
            return Err(PrimitiveFailure::NotInInventory {
                item: item.to_string(),
            });
        }
        let locale = self.locale(agent_id);
        self.placed
            .entry(locale)
            .or_default()
            .insert(item.to_string());
        Ok(())
    }

    /// One-line serialized record; equal worlds give equal bytes.
    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("world serializes")
    }
}

/// Named starting configurations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub biome: Biome,
    pub start_tick: u64,
}

impl Scenario {
    pub fn plains_day(seed: u64) -> Self {
        Self {
            name: "plains_day".into(),
            seed,
            biome: Biome::Plains,
            start_tick: 0,
        }
    }

    /// Dark forest at the first night tick: logs are present but unreachable.
    pub fn dark_forest_night(seed: u64) -> Self {
        Self {
            name: "dark_forest_night".into(),
            seed,
            biome: Biome::DarkForest,
            start_tick: DAYLIGHT_TICKS,
        }
    }

    pub fn by_name(name: &str, seed: u64) -> Option<Self> {
        match name {
            "plains_day" => Some(Self::plains_day(seed)),
            "dark_forest_night" => Some(Self::dark_forest_night(seed)),
            _ => None,
        }
    }

    pub fn build(&self, agents: &[&str]) -> WorldState {
        let mut world = WorldState::new(self.seed, self.biome).at_tick(self.start_tick);
        for a in agents {
            world.add_agent(a);
        }
        world
    }
}
