//! Agents that learn from each other through chat, structured beliefs and
//! memory, acting in a small deterministic crafting world.

pub mod agent;
pub mod belief;
pub mod comm;
pub mod craftworld;
pub mod gateway;
pub mod harness;
pub mod memory;
pub mod prompts;
pub mod scenarios;
