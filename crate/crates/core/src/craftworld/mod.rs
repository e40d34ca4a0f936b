//! A deterministic crafting world standing in for Minecraft.
//!
//! The world tracks a day/night cycle, biome-dependent resources, tool
//! gating and a small tech tree (wooden, stone and iron tools). Agents act
//! on it through short action scripts; a rule-based critic judges results.

pub mod critic;
pub mod dsl;
pub mod items;
mod multiset;
pub mod task;
pub mod world;

pub use critic::{judge, CriticVerdict};
pub use dsl::{
    parse_script, ActionScript, ParseError, ParseErrorKind, Primitive, Verb, GRAMMAR_REMINDER,
};
pub use items::Milestone;
pub use multiset::Multiset;
pub use task::{Goal, TaskSpec};
pub use world::{
    Biome, ExecutionTrace, PrimitiveFailure, Scenario, StepOutcome, WorldError, WorldState,
};
