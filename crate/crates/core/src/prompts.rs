//! Prompt texts used by every LLM call site.
//!
//! The episodic-summary pair, the two belief-update prompts and the
//! perspective-taking template are fixed; the remaining prompts are our
//! own and may be tuned freely.

pub const EPISODIC_SUMMARY_SYSTEM: &str = "You are a helpful assistant tasked with summarizing past experience episodes and pointing out the causes of failure. Create a concise summary.";

pub const EPISODIC_SUMMARY_USER: &str = "Please summarize these episodes and why they failed:";

pub const PARTNER_BELIEFS: &str = "You are a Minecraft agent.\n\nYou just had a conversation with another agent based on a task you are trying to solve.\n\nBased on the contents of the conversation and the previous beliefs, you have to create a set of beliefs that represent your perception of the other agent.";

pub const INTERACTION_BELIEFS: &str = "You are a Minecraft agent.\n\nYou just had a conversation with another agent based on a task you are trying to solve.\n\nBased on the contents of the conversation and the previous beliefs, you have to create a set of beliefs that that can help you complete the task.";

pub fn perspective_taking(
    name: &str,
    other_name: &str,
    conversation: &str,
    world_model: &str,
) -> String {
    format!(
        "You are a Minecraft agent named {name} and you are having a conversation with another agent named {other_name}.\n\n\
Based on the current conversation and your knowledge about the other agent, {other_name}, take the other agent's perspective to assess and describe your current understanding, knowledge state, and likely needs from {other_name}'s perspective.\n\n\
Here is the current conversation between you and {other_name}:{conversation}\n\n\
Here is your mental model of {other_name}: {world_model}\n\n\
Perspective Analysis:"
    )
}

pub const PERCEPTION_BELIEFS: &str = "You are a Minecraft agent. Describe what you currently perceive as a list of short belief statements, one per line. Only mention things present in the observation.";

pub const TASK_BELIEFS: &str = "You are a Minecraft agent reflecting on your next task. Answer the question in one or two sentences, starting with \"Answer:\".";

pub const ACTOR_SYSTEM: &str = "You are a Minecraft agent. Write an action script that completes the task. Reply with the script in a fenced code block.";

pub const CONVERSATION_SYSTEM: &str = "You are a Minecraft agent chatting with another agent in the in-game chat. Reply with a single chat message.";

pub const ASK_OR_ATTEMPT: &str = "You are a Minecraft agent deciding whether to ask your partner for help before acting. Reply with exactly one word: ATTEMPT to try the task yourself, or ASK to ask your partner first.";

pub const LLM_CRITIC: &str = "You are an assistant that judges whether a Minecraft agent completed its task. Reply with a JSON object {\"success\": true|false, \"critique\": \"...\"}.";

/// The first message of a help request.
pub fn help_request(task_name: &str) -> String {
    format!("Hey, can you help me with {task_name}?")
}
