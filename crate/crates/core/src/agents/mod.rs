//! Decision backends: scripted oracle agents and chat-completion models.
//!
//! Every decision is made by a freshly spawned [`DecisionAgent`], so no state
//! is carried between decision events. Agents answer with raw text in the
//! same `<reason>…</reason><answer>…</answer>` format requested from
//! language models; the orchestrator parses both the same way.

pub mod llm;
pub mod oracle;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observation::{ExperimentId, Observation, Vocabulary};
use crate::prompt::Message;

pub use llm::{
    ChatReply, ChatRequest, ChatTransport, FixtureEntry, FixtureTransport, HttpTransport, InflightLimiter, LlmBackend,
    LlmEndpointConfig, TransportError,
};
pub use oracle::{
    bayes_decide_queue, bayes_posterior_queue, crowdfund_oracle_inventor, crowdfund_oracle_investor,
    ev_heuristic_decide, reservation_price_decide, InvestorAssessment, OracleParams, QueuePosterior,
    StrategyProfile,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
}

/// Everything a backend needs for one decision.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRequest {
    pub session_messages: Vec<Message>,
    pub round_message: Message,
    /// Earlier response and format reminder when re-prompting.
    pub followup: Vec<Message>,
    pub experiment: ExperimentId,
    pub vocabulary: Vocabulary,
    pub observation: Observation,
}

impl DecisionRequest {
    pub fn messages(&self) -> Vec<Message> {
        let mut all = self.session_messages.clone();
        all.push(self.round_message.clone());
        all.extend(self.followup.iter().cloned());
        all
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub text: String,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    /// Transport retries spent on this response.
    pub retries: u32,
}

impl AgentResponse {
    pub fn scripted(text: String) -> Self {
        Self {
            text,
            latency_ms: 0,
            usage: None,
            retries: 0,
        }
    }
}

/// One subject making one decision.
pub trait DecisionAgent: Send {
    fn respond(&mut self, request: &DecisionRequest) -> Result<AgentResponse, AgentError>;
}

/// Creates agents; shared by all workers of a run.
pub trait AgentFactory: Send + Sync {
    fn spawn(&self, seed: u64) -> Box<dyn DecisionAgent>;
    /// Backend label and model name recorded in manifests and reports.
    fn identity(&self) -> BackendIdentity;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendIdentity {
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl BackendIdentity {
    pub fn label(&self) -> String {
        match &self.model {
            Some(m) => format!("{}:{m}", self.backend),
            None => self.backend.clone(),
        }
    }
}

/// Wraps a factory and counts constructed agents.
pub struct CountingFactory {
    inner: Arc<dyn AgentFactory>,
    spawned: AtomicU64,
}

impl CountingFactory {
    pub fn new(inner: Arc<dyn AgentFactory>) -> Self {
        Self {
            inner,
            spawned: AtomicU64::new(0),
        }
    }

    pub fn spawned(&self) -> u64 {
        self.spawned.load(Ordering::SeqCst)
    }
}

impl AgentFactory for CountingFactory {
    fn spawn(&self, seed: u64) -> Box<dyn DecisionAgent> {
        self.spawned.fetch_add(1, Ordering::SeqCst);
        self.inner.spawn(seed)
    }

    fn identity(&self) -> BackendIdentity {
        self.inner.identity()
    }
}

/// Which backend a run uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BackendSpec {
    OracleEv,
    OracleBayes,
    OracleCrowdfund,
    OracleReservation,
    Llm {
        endpoint: LlmEndpointConfig,
    },
    Fixture {
        path: std::path::PathBuf,
        #[serde(default = "default_fixture_model")]
        model: String,
    },
}

fn default_fixture_model() -> String {
    "fixture".into()
}

impl BackendSpec {
    pub fn name(&self) -> &'static str {
        match self {
            BackendSpec::OracleEv => "oracle-ev",
            BackendSpec::OracleBayes => "oracle-bayes",
            BackendSpec::OracleCrowdfund => "oracle-crowdfund",
            BackendSpec::OracleReservation => "oracle-reservation",
            BackendSpec::Llm { .. } => "llm",
            BackendSpec::Fixture { .. } => "fixture",
        }
    }

    /// Experiments an oracle backend can play; language-model backends play all.
    pub fn supports(&self, experiment: ExperimentId) -> bool {
        match self {
            BackendSpec::OracleEv | BackendSpec::OracleBayes => experiment == ExperimentId::Queue,
            BackendSpec::OracleCrowdfund => experiment == ExperimentId::Crowdfund,
            BackendSpec::OracleReservation => experiment == ExperimentId::Demand,
            BackendSpec::Llm { .. } | BackendSpec::Fixture { .. } => true,
        }
    }

    /// Parses a command-line backend name: an oracle name or `fixture:<path>`.
    pub fn from_name(name: &str) -> Result<Self, AgentError> {
        Ok(match name {
            "oracle-ev" => BackendSpec::OracleEv,
            "oracle-bayes" => BackendSpec::OracleBayes,
            "oracle-crowdfund" => BackendSpec::OracleCrowdfund,
            "oracle-reservation" => BackendSpec::OracleReservation,
            "llm" => {
                return Err(AgentError::Config(
                    "the llm backend needs an endpoint (base_url and model)".into(),
                ))
            }
            other => match other.strip_prefix("fixture:") {
                Some(path) if !path.is_empty() => BackendSpec::Fixture {
                    path: path.into(),
                    model: default_fixture_model(),
                },
                _ => {
                    return Err(AgentError::Config(format!(
                        "unknown backend `{other}` (expected oracle-ev, oracle-bayes, oracle-crowdfund, \
                         oracle-reservation, llm or fixture:<path>)"
                    )))
                }
            },
        })
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        match self {
            BackendSpec::Llm { endpoint } => endpoint.validate_http(),
            BackendSpec::Fixture { model, .. } if model.trim().is_empty() => {
                Err(AgentError::Config("backend.model must not be empty".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self, experiment: ExperimentId, params: &OracleParams) -> Result<Arc<dyn AgentFactory>, AgentError> {
        if !self.supports(experiment) {
            return Err(AgentError::Config(format!(
                "backend {} cannot play the {experiment} experiment",
                self.name()
            )));
        }
        params.validate()?;
        Ok(match self {
            BackendSpec::OracleEv => Arc::new(oracle::OracleFactory::new(oracle::OracleKind::Ev, params.clone())),
            BackendSpec::OracleBayes => Arc::new(oracle::OracleFactory::new(oracle::OracleKind::Bayes, params.clone())),
            BackendSpec::OracleCrowdfund => {
                Arc::new(oracle::OracleFactory::new(oracle::OracleKind::Crowdfund, params.clone()))
            }
            BackendSpec::OracleReservation => {
                Arc::new(oracle::OracleFactory::new(oracle::OracleKind::Reservation, params.clone()))
            }
            BackendSpec::Llm { endpoint } => Arc::new(LlmBackend::from_env(endpoint.clone())?),
            BackendSpec::Fixture { path, model } => {
                let transport = FixtureTransport::load(path)?;
                let endpoint = LlmEndpointConfig::for_fixture(model);
                Arc::new(LlmBackend::with_transport(endpoint, Arc::new(transport), "fixture"))
            }
        })
    }
}
