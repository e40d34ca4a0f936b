use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AgentFactory, ExperimentSpec, HarnessError, Seat, TrialContext};
use crate::agent::{Agent, AgentConfig, AgentRole, Backends};
use crate::gateway::{
    CallParams, CallRole, EmbeddingHandle, HttpTransport, LocalHashEmbedder, OpenAiCompatBackend,
    RemoteEmbedder, ReqwestTransport, RoleClient, ScriptedOracle,
};
use crate::scenarios::{support_oracle, ScriptedAgent};

/// How agents reach a model. Scripted rule files are TOML oracle tables
/// resolved relative to the experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Scripted {
        actor: Option<PathBuf>,
        support: Option<PathBuf>,
        expert: Option<PathBuf>,
    },
    Openai {
        base_url: String,
        model: String,
        #[serde(default)]
        expert_model: Option<String>,
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        embedding_model: Option<String>,
        #[serde(default = "default_embedding_dimension")]
        embedding_dimension: usize,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        /// Per-role overrides of the default call parameters.
        #[serde(default)]
        roles: BTreeMap<CallRole, RoleOverride>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleOverride {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

fn default_embedding_dimension() -> usize {
    1536
}
fn default_timeout() -> u64 {
    60
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Scripted {
            actor: None,
            support: None,
            expert: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub backends: BackendConfig,
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl ExperimentFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, HarnessError> {
        let file: ExperimentFile = toml::from_str(text).map_err(|e| HarnessError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        file.experiment.validate()?;
        Ok(file)
    }

    /// Load and validate, resolving rule-file paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let mut file = Self::parse(&read(path)?, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let BackendConfig::Scripted {
            actor,
            support,
            expert,
        } = &mut file.backends
        {
            for p in [actor, support, expert].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(file)
    }
}

enum Source {
    Scripted {
        actor: Option<String>,
        support: Option<String>,
        expert: Option<String>,
    },
    Remote {
        base_url: String,
        model: String,
        expert_model: String,
        api_key: Option<String>,
        embedder: EmbeddingHandle,
        transport: Arc<dyn HttpTransport>,
        roles: BTreeMap<CallRole, RoleOverride>,
    },
}

/// Builds agents from a [`BackendConfig`].
pub struct ConfiguredFactory {
    source: Source,
}

impl std::fmt::Debug for ConfiguredFactory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.source {
            Source::Scripted { .. } => "scripted",
            Source::Remote { .. } => "openai",
        };
        f.debug_struct("ConfiguredFactory")
            .field("kind", &kind)
            .finish()
    }
}

fn oracle(text: Option<&str>, fallback: &str) -> Result<ScriptedOracle, HarnessError> {
    match text {
        Some(t) => ScriptedOracle::from_toml(t).map_err(|e| HarnessError::Parse {
            path: "rule table".into(),
            message: e.to_string(),
        }),
        None => Ok(ScriptedOracle::new(fallback)),
    }
}

fn role_for(seat: Seat) -> AgentRole {
    match seat {
        Seat::Novice => AgentRole::Novice,
        Seat::Expert => AgentRole::Expert,
        Seat::Peer(_) => AgentRole::Peer,
    }
}

impl ConfiguredFactory {
    pub fn new(config: &BackendConfig) -> Result<Self, HarnessError> {
        let source = match config {
            BackendConfig::Scripted {
                actor,
                support,
                expert,
            } => {
                let load = |p: &Option<PathBuf>| p.as_deref().map(read).transpose();
                let source = Source::Scripted {
                    actor: load(actor)?,
                    support: load(support)?,
                    expert: load(expert)?,
                };
                if let Source::Scripted {
                    actor,
                    support,
                    expert,
                } = &source
                {
                    // Surface malformed tables before any trial starts.
                    for text in [actor, support, expert].into_iter().flatten() {
                        oracle(Some(text), "")?;
                    }
                }
                source
            }
            BackendConfig::Openai {
                base_url,
                model,
                expert_model,
                api_key_env,
                embedding_model,
                embedding_dimension,
                timeout_secs,
                roles,
            } => {
                for (role, o) in roles {
                    if o.temperature.is_some_and(|t| !(0.0..=2.0).contains(&t))
                        || o.max_tokens == Some(0)
                    {
                        return Err(HarnessError::Config(format!(
                            "invalid call parameters for role {role:?}"
                        )));
                    }
                }
                let api_key = api_key_env.as_deref().and_then(|k| std::env::var(k).ok());
                let transport: Arc<dyn HttpTransport> = Arc::new(
                    ReqwestTransport::new(Duration::from_secs(*timeout_secs))
                        .map_err(|e| HarnessError::Config(format!("http client: {e}")))?,
                );
                let embedder: EmbeddingHandle = match embedding_model {
                    Some(m) => Arc::new(RemoteEmbedder::new(
                        base_url.clone(),
                        api_key.clone(),
                        m.clone(),
                        *embedding_dimension,
                        transport.clone(),
                    )),
                    None => LocalHashEmbedder::handle(),
                };
                Source::Remote {
                    base_url: base_url.clone(),
                    model: model.clone(),
                    expert_model: expert_model.clone().unwrap_or_else(|| model.clone()),
                    api_key,
                    embedder,
                    transport,
                    roles: roles.clone(),
                }
            }
        };
        Ok(Self { source })
    }
}

impl AgentFactory for ConfiguredFactory {
    fn build(
        &self,
        seat: Seat,
        agent_id: &str,
        _ctx: &TrialContext,
    ) -> Result<Agent, HarnessError> {
        let config = AgentConfig::new(agent_id, role_for(seat));
        match &self.source {
            Source::Scripted {
                actor,
                support,
                expert,
            } => {
                let support_text = if seat == Seat::Expert {
                    expert.as_deref().or(support.as_deref())
                } else {
                    support.as_deref()
                };
                let support = oracle(support_text, "OK")?.followed_by(support_oracle(vec![]));
                let actor = if seat == Seat::Expert {
                    None
                } else {
                    Some(oracle(actor.as_deref(), "```\nmine dirt\n```")?)
                };
                Ok(ScriptedAgent::new(config, actor, support)?.agent)
            }
            Source::Remote {
                base_url,
                model,
                expert_model,
                api_key,
                embedder,
                transport,
                roles,
            } => {
                let model = if seat == Seat::Expert {
                    expert_model
                } else {
                    model
                };
                let client = |role: CallRole| {
                    let backend = Arc::new(OpenAiCompatBackend::new(
                        base_url.clone(),
                        api_key.clone(),
                        transport.clone(),
                    ));
                    let mut params = CallParams::for_role(role, model.clone());
                    if let Some(o) = roles.get(&role) {
                        params.temperature = o.temperature.unwrap_or(params.temperature);
                        params.max_tokens = o.max_tokens.unwrap_or(params.max_tokens);
                    }
                    RoleClient::with_params(backend, params)
                };
                let backends = Backends {
                    actor: (seat != Seat::Expert).then(|| client(CallRole::Actor)),
                    critic: Some(client(CallRole::Critic)),
                    belief_former: client(CallRole::BeliefFormer),
                    conversationalist: client(CallRole::Conversationalist),
                };
                Ok(Agent::new(config, backends, embedder.clone())?)
            }
        }
    }
}
