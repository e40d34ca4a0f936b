//! LLM-backed belief formation and revision.

use crate::comm::ChatTranscript;
use crate::craftworld::{items, Biome};
use crate::gateway::{Message, RoleClient};
use crate::memory::SemanticStore;
use crate::prompts;

use super::{BeliefError, CausalGraph, MentalModel, PartnerModel, Percept, TaskBelief};
use crate::craftworld::TaskSpec;

/// Strip list markers and blank lines from a completion.
pub(crate) fn parse_statements(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(['-', '*', '\u{2022}']).trim_start();
            let digits = l.chars().take_while(char::is_ascii_digit).count();
            let l = if digits > 0 && l[digits..].starts_with(['.', ')']) {
                l[digits + 1..].trim_start()
            } else {
                l
            };
            l.to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Known entity ids mentioned in `statement`, longest match first, so
/// "dark oak log" is `dark_oak_log` and not `oak_log`.
pub fn mentioned_entities(statement: &str) -> Vec<String> {
    let mut entities: Vec<(String, Vec<String>)> = items::vocabulary()
        .into_iter()
        .map(str::to_string)
        .chain(Biome::all().iter().map(|b| b.id().to_string()))
        .map(|id| {
            let parts = id.split('_').map(str::to_string).collect();
            (id, parts)
        })
        .collect();
    entities.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));
    let w = words(statement);
    let mut found = Vec::new();
    let mut i = 0;
    while i < w.len() {
        let hit = entities.iter().find(|(_, parts)| {
            w.len() - i >= parts.len() && parts.iter().enumerate().all(|(k, p)| &w[i + k] == p)
        });
        match hit {
            Some((id, parts)) => {
                if !found.contains(id) {
                    found.push(id.clone());
                }
                i += parts.len();
            }
            None => i += 1,
        }
    }
    found
}

fn fallback_perception(percept: &Percept) -> Vec<String> {
    let mut out = vec![
        format!("I am in the {} biome.", percept.biome),
        format!("It is {} (tick {}).", percept.time_of_day, percept.tick),
    ];
    if !percept.nearby_resources.is_empty() {
        out.push(format!("Nearby resources: {}.", percept.nearby_resources));
    }
    if !percept.inventory.is_empty() {
        out.push(format!("My inventory contains {}.", percept.inventory));
    }
    out
}

/// Beliefs formed from direct sensory input. Statements naming entities
/// absent from the percept are dropped; when nothing survives, or the
/// backend fails, statements are rendered straight from the percept.
pub fn form_perception_beliefs(percept: &Percept, client: &RoleClient) -> Vec<String> {
    let response = client.call(vec![
        Message::system(prompts::PERCEPTION_BELIEFS),
        Message::user(format!("Observation:\n{}", percept.render())),
    ]);
    if response.is_error() {
        tracing::warn!(diagnostic = %response.content, "perception belief call failed, using template");
        return fallback_perception(percept);
    }
    let mut allowed = percept.vocabulary();
    if percept
        .nearby_resources
        .items()
        .chain(percept.inventory.items())
        .any(items::is_log)
    {
        allowed.push(items::LOG_TAG.to_string());
    }
    let kept: Vec<String> = parse_statements(&response.content)
        .into_iter()
        .filter(|s| {
            let unknown: Vec<String> = mentioned_entities(s).into_iter().filter(|e| !allowed.contains(e)).collect();
            if !unknown.is_empty() {
                tracing::warn!(statement = %s, ?unknown, "dropping perception belief naming absent entities");
            }
            unknown.is_empty()
        })
        .collect();
    if kept.is_empty() {
        fallback_perception(percept)
    } else {
        kept
    }
}

/// Task beliefs for `task`. A semantic-memory entry for the canonical
/// question is returned verbatim without calling the backend.
pub fn form_task_beliefs(
    task: &TaskSpec,
    semantic: Option<&SemanticStore>,
    client: &RoleClient,
) -> Result<Vec<TaskBelief>, BeliefError> {
    if task.name.trim().is_empty() {
        return Err(BeliefError::EmptyTask);
    }
    if let Some(entry) = semantic.and_then(|s| s.get(&task.canonical_question)) {
        return Ok(vec![TaskBelief {
            question: entry.question.clone(),
            answer: entry.answer.clone(),
        }]);
    }
    let response = client.call(vec![
        Message::system(prompts::TASK_BELIEFS),
        Message::user(task.canonical_question.clone()),
    ]);
    if response.is_error() {
        tracing::warn!(diagnostic = %response.content, "task belief call failed");
        return Ok(Vec::new());
    }
    Ok(vec![TaskBelief {
        question: task.canonical_question.clone(),
        answer: response.content.trim().to_string(),
    }])
}

fn render_prior(prior: &[String]) -> String {
    if prior.is_empty() {
        "(none)".to_string()
    } else {
        prior
            .iter()
            .map(|p| format!("- {p}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Rewrite the interaction beliefs from the conversation and the prior
/// list. The prompt carries exactly those two inputs.
pub fn integrate_interaction_beliefs(
    transcript: &ChatTranscript,
    prior: &[String],
    client: &RoleClient,
) -> Result<Vec<String>, BeliefError> {
    if transcript.message_count() == 0 {
        return Err(BeliefError::EmptyTranscript);
    }
    let response = client.call(vec![
        Message::system(prompts::INTERACTION_BELIEFS),
        Message::user(format!(
            "Conversation:{}\n\nPrevious beliefs:\n{}\n\nWrite the new set of beliefs, one per line.",
            transcript.render(),
            render_prior(prior)
        )),
    ]);
    if response.is_error() {
        tracing::warn!(diagnostic = %response.content, "interaction belief call failed, keeping prior");
        return Ok(prior.to_vec());
    }
    let statements = parse_statements(&response.content);
    Ok(if statements.is_empty() {
        prior.to_vec()
    } else {
        statements
    })
}

const GRAPH_FIELDS: [&str; 6] = [
    "context",
    "desire",
    "percept",
    "belief",
    "causal_event",
    "action",
];

fn parse_graph(text: &str, previous: &CausalGraph) -> CausalGraph {
    let mut graph = CausalGraph::default();
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['-', '*']).trim();
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim().to_lowercase().replace([' ', '-'], "_");
        let value = value.trim().to_string();
        match key.as_str() {
            "context" => graph.context = value,
            "desire" => graph.desire = value,
            "percept" => graph.percept = value,
            "belief" => graph.belief = value,
            "action" => graph.action = value,
            "causal_event" => {
                let lowered = value.to_lowercase();
                if !(value.is_empty() || lowered == "none" || lowered == "n/a") {
                    graph.causal_event = Some(value);
                }
            }
            _ => {}
        }
    }
    for (field, prev) in [
        (&mut graph.context, &previous.context),
        (&mut graph.desire, &previous.desire),
        (&mut graph.percept, &previous.percept),
        (&mut graph.belief, &previous.belief),
        (&mut graph.action, &previous.action),
    ] {
        if field.is_empty() {
            *field = if prev.is_empty() {
                "unknown".to_string()
            } else {
                prev.clone()
            };
        }
    }
    graph
}

/// Revise the model of a partner from the conversation. On backend error
/// the model comes back unchanged.
pub fn update_partner_model(
    model: &PartnerModel,
    transcript: &ChatTranscript,
    client: &RoleClient,
) -> Result<PartnerModel, BeliefError> {
    if transcript.messages_from(&model.partner_id) == 0 {
        return Err(BeliefError::NoPartnerMessage(model.partner_id.clone()));
    }
    let previous = if model.model.is_empty() {
        "(none)".to_string()
    } else {
        model.model.render()
    };
    let format_hint = if model.model.is_structured() {
        format!(
            "Answer with exactly these lines:\n{}",
            GRAPH_FIELDS.map(|f| format!("{f}: ...")).join("\n")
        )
    } else {
        "Answer with a short paragraph.".to_string()
    };
    let response = client.call(vec![
        Message::system(prompts::PARTNER_BELIEFS),
        Message::user(format!(
            "Conversation:{}\n\nPrevious beliefs about {}:\n{}\n\n{}",
            transcript.render(),
            model.partner_id,
            previous,
            format_hint
        )),
    ]);
    if response.is_error() {
        tracing::warn!(diagnostic = %response.content, "partner model call failed, keeping model");
        return Ok(model.clone());
    }
    let revised = match &model.model {
        MentalModel::Structured(prev) => {
            MentalModel::Structured(parse_graph(&response.content, prev))
        }
        MentalModel::FreeText { .. } => MentalModel::FreeText {
            text: response.content.trim().to_string(),
        },
    };
    let mut updated = model.clone();
    updated.revise(revised);
    Ok(updated)
}
