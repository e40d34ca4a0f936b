//! Deterministic table-driven chat backend.
//!
//! Rules are tried in order and the first match answers. Matching is
//! side-effect free; the only mutation is the call-log append.

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::Deserialize;

use super::{ChatBackend, ChatRequest, ChatResponse};

pub type RequestPredicate = Arc<dyn Fn(&ChatRequest) -> bool + Send + Sync>;
pub type ResponseFn = Arc<dyn Fn(&ChatRequest) -> String + Send + Sync>;

#[derive(Clone)]
pub enum Matcher {
    Always,
    /// Substring of any message content.
    Contains(String),
    LastUserContains(String),
    SystemContains(String),
    All(Vec<Matcher>),
    Any(Vec<Matcher>),
    Not(Box<Matcher>),
    Predicate(RequestPredicate),
}

impl Matcher {
    pub fn contains(text: impl Into<String>) -> Self {
        Matcher::Contains(text.into())
    }

    pub fn system(text: impl Into<String>) -> Self {
        Matcher::SystemContains(text.into())
    }

    pub fn predicate(f: impl Fn(&ChatRequest) -> bool + Send + Sync + 'static) -> Self {
        Matcher::Predicate(Arc::new(f))
    }

    pub fn and(self, other: Matcher) -> Self {
        match self {
            Matcher::All(mut all) => {
                all.push(other);
                Matcher::All(all)
            }
            m => Matcher::All(vec![m, other]),
        }
    }

    pub fn matches(&self, request: &ChatRequest) -> bool {
        match self {
            Matcher::Always => true,
            Matcher::Contains(needle) => request
                .messages
                .iter()
                .any(|m| m.content.contains(needle.as_str())),
            Matcher::LastUserContains(needle) => request.last_user().contains(needle.as_str()),
            Matcher::SystemContains(needle) => request.system_prompt().contains(needle.as_str()),
            Matcher::All(all) => all.iter().all(|m| m.matches(request)),
            Matcher::Any(any) => any.iter().any(|m| m.matches(request)),
            Matcher::Not(inner) => !inner.matches(request),
            Matcher::Predicate(f) => f(request),
        }
    }
}

impl fmt::Debug for Matcher {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Matcher::Always => write!(f, "Always"),
            Matcher::Contains(s) => write!(f, "Contains({s:?})"),
            Matcher::LastUserContains(s) => write!(f, "LastUserContains({s:?})"),
            Matcher::SystemContains(s) => write!(f, "SystemContains({s:?})"),
            Matcher::All(v) => f.debug_tuple("All").field(v).finish(),
            Matcher::Any(v) => f.debug_tuple("Any").field(v).finish(),
            Matcher::Not(m) => f.debug_tuple("Not").field(m).finish(),
            Matcher::Predicate(_) => write!(f, "Predicate(..)"),
        }
    }
}

#[derive(Clone)]
pub enum Responder {
    /// Template text. `{{last_user}}` and `{{system}}` are substituted.
    Text(String),
    /// Produces an error response carrying the diagnostic.
    Fail(String),
    Dynamic(ResponseFn),
}

impl Responder {
    pub fn text(template: impl Into<String>) -> Self {
        Responder::Text(template.into())
    }

    pub fn dynamic(f: impl Fn(&ChatRequest) -> String + Send + Sync + 'static) -> Self {
        Responder::Dynamic(Arc::new(f))
    }

    fn respond(&self, request: &ChatRequest) -> ChatResponse {
        match self {
            Responder::Text(template) => ChatResponse::stop(render_template(template, request)),
            Responder::Fail(diagnostic) => ChatResponse::error(diagnostic.clone()),
            Responder::Dynamic(f) => ChatResponse::stop(f(request)),
        }
    }
}

impl fmt::Debug for Responder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Responder::Text(s) => write!(f, "Text({s:?})"),
            Responder::Fail(s) => write!(f, "Fail({s:?})"),
            Responder::Dynamic(_) => write!(f, "Dynamic(..)"),
        }
    }
}

fn render_template(template: &str, request: &ChatRequest) -> String {
    template
        .replace("{{last_user}}", request.last_user())
        .replace("{{system}}", request.system_prompt())
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub matcher: Matcher,
    pub responder: Responder,
}

impl Rule {
    pub fn new(matcher: Matcher, responder: Responder) -> Self {
        Self { matcher, responder }
    }
}

#[derive(Debug)]
pub struct ScriptedOracle {
    name: String,
    rules: Vec<Rule>,
    default_response: Responder,
    call_log: Mutex<Vec<ChatRequest>>,
}

impl ScriptedOracle {
    pub fn new(default_response: impl Into<String>) -> Self {
        Self {
            name: "scripted".to_string(),
            rules: Vec::new(),
            default_response: Responder::Text(default_response.into()),
            call_log: Mutex::new(Vec::new()),
        }
    }

    /// An oracle whose every call fails.
    pub fn failing(diagnostic: impl Into<String>) -> Self {
        let mut oracle = Self::new("");
        oracle.default_response = Responder::Fail(diagnostic.into());
        oracle
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn rule(mut self, matcher: Matcher, responder: Responder) -> Self {
        self.rules.push(Rule::new(matcher, responder));
        self
    }

    /// Shorthand: any message containing `needle` gets `response`.
    pub fn when(self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.rule(
            Matcher::Contains(needle.into()),
            Responder::Text(response.into()),
        )
    }

    pub fn with_default(mut self, responder: Responder) -> Self {
        self.default_response = responder;
        self
    }

    /// Append `fallback`'s rules after this oracle's own.
    pub fn followed_by(mut self, fallback: ScriptedOracle) -> Self {
        self.rules.extend(fallback.rules);
        self
    }

    pub fn into_handle(self) -> Arc<Self> {
        Arc::new(self)
    }

    pub fn call_log(&self) -> Vec<ChatRequest> {
        self.call_log.lock().expect("call log poisoned").clone()
    }

    /// Pure function of the request: which response the table produces.
    pub fn lookup(&self, request: &ChatRequest) -> ChatResponse {
        self.rules
            .iter()
            .find(|rule| rule.matcher.matches(request))
            .map(|rule| rule.responder.respond(request))
            .unwrap_or_else(|| self.default_response.respond(request))
    }

    /// Parse a rule table from TOML.
    ///
    /// ```toml
    /// default = "ATTEMPT"
    /// [[rule]]
    /// contains = "Mine 1 dirt"
    /// response = "mine dirt"
    /// ```
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        let file: RuleFile = toml::from_str(text)?;
        let mut oracle = ScriptedOracle::new(file.default.unwrap_or_default());
        if let Some(name) = file.name {
            oracle.name = name;
        }
        for spec in file.rule {
            let mut conditions = Vec::new();
            if let Some(s) = spec.contains {
                conditions.push(Matcher::Contains(s));
            }
            if let Some(s) = spec.last_user_contains {
                conditions.push(Matcher::LastUserContains(s));
            }
            if let Some(s) = spec.system_contains {
                conditions.push(Matcher::SystemContains(s));
            }
            if let Some(s) = spec.not_contains {
                conditions.push(Matcher::Not(Box::new(Matcher::Contains(s))));
            }
            let matcher = match conditions.len() {
                0 => Matcher::Always,
                1 => conditions.pop().expect("one condition"),
                _ => Matcher::All(conditions),
            };
            let responder = match (spec.response, spec.error) {
                (_, Some(diagnostic)) => Responder::Fail(diagnostic),
                (Some(text), None) => Responder::Text(text),
                (None, None) => Responder::Text(String::new()),
            };
            oracle.rules.push(Rule::new(matcher, responder));
        }
        Ok(oracle)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleFile {
    name: Option<String>,
    default: Option<String>,
    #[serde(default)]
    rule: Vec<RuleSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSpec {
    contains: Option<String>,
    last_user_contains: Option<String>,
    system_contains: Option<String>,
    not_contains: Option<String>,
    response: Option<String>,
    error: Option<String>,
}

impl ChatBackend for ScriptedOracle {
    fn dispatch(&self, request: &ChatRequest) -> ChatResponse {
        self.call_log
            .lock()
            .expect("call log poisoned")
            .push(request.clone());
        self.lookup(request)
    }

    fn call_count(&self) -> usize {
        self.call_log.lock().expect("call log poisoned").len()
    }

    fn describe(&self) -> String {
        format!("scripted:{}", self.name)
    }
}
