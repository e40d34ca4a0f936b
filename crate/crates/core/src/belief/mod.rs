//! Structured mental state.
//!
//! Every agent keeps beliefs in exactly four containers (perception, task,
//! interaction, partner). Partners are modeled with the same six-field
//! causal template the agent uses for itself.

mod formation;
mod percept;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use formation::{
    form_perception_beliefs, form_task_beliefs, integrate_interaction_beliefs, mentioned_entities,
    update_partner_model,
};
pub use percept::{Percept, TimeOfDay};

/// Oldest statements are evicted past this many per category.
pub const CATEGORY_CAP: usize = 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BeliefError {
    #[error("task name is empty")]
    EmptyTask,
    #[error("transcript has no messages")]
    EmptyTranscript,
    #[error("transcript has no message from partner {0}")]
    NoPartnerMessage(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskBelief {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalGraph {
    pub context: String,
    pub desire: String,
    pub percept: String,
    pub belief: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub causal_event: Option<String>,
    pub action: String,
}

impl CausalGraph {
    /// All required fields are non-empty.
    pub fn is_instantiated(&self) -> bool {
        [
            &self.context,
            &self.desire,
            &self.percept,
            &self.belief,
            &self.action,
        ]
        .iter()
        .all(|f| !f.trim().is_empty())
    }

    pub fn render(&self) -> String {
        let mut parts = Vec::new();
        for (name, value) in [
            ("context", Some(&self.context)),
            ("desire", Some(&self.desire)),
            ("percept", Some(&self.percept)),
            ("belief", Some(&self.belief)),
            ("causal event", self.causal_event.as_ref()),
            ("action", Some(&self.action)),
        ] {
            if let Some(v) = value.filter(|v| !v.is_empty()) {
                parts.push(format!("{name}: {v}"));
            }
        }
        parts.join("; ")
    }
}

/// A partner's mental state: the structured template, or a single
/// free-text description when structured modeling is ablated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MentalModel {
    Structured(CausalGraph),
    FreeText { text: String },
}

impl MentalModel {
    pub fn empty(structured: bool) -> Self {
        if structured {
            MentalModel::Structured(CausalGraph::default())
        } else {
            MentalModel::FreeText {
                text: String::new(),
            }
        }
    }

    pub fn is_structured(&self) -> bool {
        matches!(self, MentalModel::Structured(_))
    }

    pub fn is_empty(&self) -> bool {
        match self {
            MentalModel::Structured(g) => *g == CausalGraph::default(),
            MentalModel::FreeText { text } => text.is_empty(),
        }
    }

    pub fn render(&self) -> String {
        match self {
            MentalModel::Structured(g) => g.render(),
            MentalModel::FreeText { text } => text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Revision {
    pub round: u32,
    pub model: MentalModel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartnerModel {
    pub partner_id: String,
    pub model: MentalModel,
    pub last_updated_round: u32,
    pub revision_history: Vec<Revision>,
}

impl PartnerModel {
    pub fn new(partner_id: impl Into<String>, structured: bool) -> Self {
        Self {
            partner_id: partner_id.into(),
            model: MentalModel::empty(structured),
            last_updated_round: 0,
            revision_history: Vec::new(),
        }
    }

    /// Record a new revision; the current model is always the last entry.
    pub(crate) fn revise(&mut self, model: MentalModel) {
        self.last_updated_round += 1;
        self.revision_history.push(Revision {
            round: self.last_updated_round,
            model: model.clone(),
        });
        self.model = model;
    }

    pub fn render(&self) -> String {
        if self.model.is_empty() {
            format!("{}: (nothing known yet)", self.partner_id)
        } else {
            format!("{}: {}", self.partner_id, self.model.render())
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefSet {
    pub perception: Vec<String>,
    pub task: Vec<TaskBelief>,
    pub interaction: Vec<String>,
    pub partners: BTreeMap<String, PartnerModel>,
}

fn cap<T>(items: &mut Vec<T>) {
    if items.len() > CATEGORY_CAP {
        let excess = items.len() - CATEGORY_CAP;
        items.drain(..excess);
    }
}

impl BeliefSet {
    pub fn is_empty(&self) -> bool {
        self.perception.is_empty()
            && self.task.is_empty()
            && self.interaction.is_empty()
            && self.partners.is_empty()
    }

    pub fn set_perception(&mut self, statements: Vec<String>) {
        self.perception = statements;
        cap(&mut self.perception);
    }

    pub fn set_interaction(&mut self, statements: Vec<String>) {
        self.interaction = statements;
        cap(&mut self.interaction);
    }

    /// Insert or replace by question; the replaced belief becomes the newest.
    pub fn upsert_task(&mut self, belief: TaskBelief) {
        self.task.retain(|b| b.question != belief.question);
        self.task.push(belief);
        cap(&mut self.task);
    }

    pub fn partner(&self, partner_id: &str) -> Option<&PartnerModel> {
        self.partners.get(partner_id)
    }

    pub fn partner_entry(&mut self, partner_id: &str, structured: bool) -> &mut PartnerModel {
        self.partners
            .entry(partner_id.to_string())
            .or_insert_with(|| PartnerModel::new(partner_id, structured))
    }

    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("belief set serializes")
    }
}

/// Provider-agnostic token estimate: whitespace words times 4/3, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    (words * 4).div_ceil(3)
}

const CATEGORY_HEADERS: [&str; 4] = [
    "Perception beliefs:",
    "Task beliefs:",
    "Interaction beliefs:",
    "Partner beliefs:",
];

fn render_categories(categories: &[Vec<String>; 4]) -> String {
    let mut out = String::new();
    for (header, statements) in CATEGORY_HEADERS.iter().zip(categories) {
        if statements.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str(header);
        for s in statements {
            out.push_str("\n- ");
            out.push_str(s);
        }
    }
    out
}

/// Render beliefs in fixed category order within a token budget. When the
/// budget is exceeded, whole statements are dropped oldest-first from the
/// currently largest category.
pub fn render_belief_context(beliefs: &BeliefSet, budget: usize) -> String {
    assert!(budget > 0, "belief budget must be positive");
    let mut categories: [Vec<String>; 4] = [
        beliefs.perception.clone(),
        beliefs
            .task
            .iter()
            .map(|b| format!("Q: {} A: {}", b.question, b.answer))
            .collect(),
        beliefs.interaction.clone(),
        beliefs
            .partners
            .values()
            .map(PartnerModel::render)
            .collect(),
    ];
    loop {
        let text = render_categories(&categories);
        if estimate_tokens(&text) <= budget {
            return text;
        }
        let largest = (0..4)
            .rev()
            .max_by_key(|&i| categories[i].len())
            .expect("four categories");
        if categories[largest].is_empty() {
            return String::new();
        }
        categories[largest].remove(0);
    }
}
