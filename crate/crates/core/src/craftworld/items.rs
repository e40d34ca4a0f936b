//! Item registry, mining rules, recipes and the tool tech tree.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Tag accepted wherever a specific log is expected.
pub const LOG_TAG: &str = "wood_log";
pub const LOGS: &[&str] = &["oak_log", "dark_oak_log"];

pub const RESOURCES: &[&str] = &[
    "dirt",
    "sand",
    "oak_log",
    "dark_oak_log",
    "stone",
    "iron_ore",
];

pub const CRAFTED: &[&str] = &[
    "wooden_plank",
    "stick",
    "crafting_table",
    "furnace",
    "wooden_pickaxe",
    "wooden_axe",
    "stone_pickaxe",
    "iron_ingot",
    "iron_pickaxe",
];

pub const STATIONS: &[&str] = &["crafting_table", "furnace"];

pub fn is_log(item: &str) -> bool {
    LOGS.contains(&item)
}

pub fn is_known(id: &str) -> bool {
    id == LOG_TAG || RESOURCES.contains(&id) || CRAFTED.contains(&id)
}

pub fn is_resource(id: &str) -> bool {
    RESOURCES.contains(&id)
}

pub fn is_station(id: &str) -> bool {
    STATIONS.contains(&id)
}

/// Every entity id an agent may legitimately mention.
pub fn vocabulary() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = RESOURCES.iter().chain(CRAFTED).copied().collect();
    v.push(LOG_TAG);
    v
}

/// Tools that allow mining `resource`; empty means bare hands suffice.
pub fn tools_for(resource: &str) -> &'static [&'static str] {
    match resource {
        "stone" => &["wooden_pickaxe", "stone_pickaxe", "iron_pickaxe"],
        "iron_ore" => &["stone_pickaxe", "iron_pickaxe"],
        _ => &[],
    }
}

/// Logs cannot be found in the dark.
pub fn night_blocked(resource: &str) -> bool {
    is_log(resource)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingredient {
    Item(&'static str),
    AnyLog,
}

impl Ingredient {
    pub fn label(self) -> &'static str {
        match self {
            Ingredient::Item(id) => id,
            Ingredient::AnyLog => LOG_TAG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recipe {
    pub output: &'static str,
    pub yield_count: u32,
    pub ingredients: &'static [(Ingredient, u32)],
    pub station: Option<&'static str>,
}

pub const RECIPES: &[Recipe] = &[
    Recipe {
        output: "wooden_plank",
        yield_count: 4,
        ingredients: &[(Ingredient::AnyLog, 1)],
        station: None,
    },
    Recipe {
        output: "stick",
        yield_count: 4,
        ingredients: &[(Ingredient::Item("wooden_plank"), 2)],
        station: None,
    },
    Recipe {
        output: "crafting_table",
        yield_count: 1,
        ingredients: &[(Ingredient::Item("wooden_plank"), 4)],
        station: None,
    },
    Recipe {
        output: "wooden_pickaxe",
        yield_count: 1,
        ingredients: &[
            (Ingredient::Item("wooden_plank"), 3),
            (Ingredient::Item("stick"), 2),
        ],
        station: Some("crafting_table"),
    },
    Recipe {
        output: "wooden_axe",
        yield_count: 1,
        ingredients: &[
            (Ingredient::Item("wooden_plank"), 3),
            (Ingredient::Item("stick"), 2),
        ],
        station: Some("crafting_table"),
    },
    Recipe {
        output: "stone_pickaxe",
        yield_count: 1,
        ingredients: &[
            (Ingredient::Item("stone"), 3),
            (Ingredient::Item("stick"), 2),
        ],
        station: Some("crafting_table"),
    },
    Recipe {
        output: "furnace",
        yield_count: 1,
        ingredients: &[(Ingredient::Item("stone"), 8)],
        station: Some("crafting_table"),
    },
    Recipe {
        output: "iron_pickaxe",
        yield_count: 1,
        ingredients: &[
            (Ingredient::Item("iron_ingot"), 3),
            (Ingredient::Item("stick"), 2),
        ],
        station: Some("crafting_table"),
    },
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SmeltRecipe {
    pub input: &'static str,
    pub output: &'static str,
    pub fuel: &'static str,
    pub station: &'static str,
}

pub const SMELTING: &[SmeltRecipe] = &[SmeltRecipe {
    input: "iron_ore",
    output: "iron_ingot",
    fuel: "wooden_plank",
    station: "furnace",
}];

pub fn recipe_for(item: &str) -> Option<&'static Recipe> {
    RECIPES.iter().find(|r| r.output == item)
}

pub fn smelt_recipe_for(input: &str) -> Option<&'static SmeltRecipe> {
    SMELTING.iter().find(|r| r.input == input)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Milestone {
    WoodenTool,
    StoneTool,
    IronTool,
}

impl Milestone {
    pub const ALL: [Milestone; 3] = [
        Milestone::WoodenTool,
        Milestone::StoneTool,
        Milestone::IronTool,
    ];

    pub fn defining_item(self) -> &'static str {
        match self {
            Milestone::WoodenTool => "wooden_pickaxe",
            Milestone::StoneTool => "stone_pickaxe",
            Milestone::IronTool => "iron_pickaxe",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Milestone::WoodenTool => "Wooden Tool",
            Milestone::StoneTool => "Stone Tool",
            Milestone::IronTool => "Iron Tool",
        }
    }
}

/// Items obtainable from raw resources when `forbidden` can never be
/// produced. Tools gate mining; stations gate recipes and smelting.
pub fn reachable_items_without(forbidden: Option<&str>) -> BTreeSet<&'static str> {
    let mut have: BTreeSet<&'static str> = BTreeSet::new();
    loop {
        let before = have.len();
        for &res in RESOURCES {
            if Some(res) == forbidden {
                continue;
            }
            let tools = tools_for(res);
            if tools.is_empty() || tools.iter().any(|t| have.contains(t)) {
                have.insert(res);
            }
        }
        for recipe in RECIPES {
            if Some(recipe.output) == forbidden {
                continue;
            }
            let inputs_ok = recipe.ingredients.iter().all(|(ing, _)| match ing {
                Ingredient::Item(id) => have.contains(id),
                Ingredient::AnyLog => LOGS.iter().any(|l| have.contains(l)),
            });
            let station_ok = recipe.station.is_none_or(|s| have.contains(s));
            if inputs_ok && station_ok {
                have.insert(recipe.output);
            }
        }
        for smelt in SMELTING {
            if Some(smelt.output) == forbidden {
                continue;
            }
            if have.contains(smelt.input)
                && have.contains(smelt.fuel)
                && have.contains(smelt.station)
            {
                have.insert(smelt.output);
            }
        }
        if have.len() == before {
            return have;
        }
    }
}
