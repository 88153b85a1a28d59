//! Simulation harness for replicating economic experiments with LLM-simulated
//! or scripted subjects.
//!
//! The crate is organised bottom-up:
//!
//! - [`game`]: payoff rules and state machines of the three economies
//! - [`prompt`]: session/round message composition and answer parsing
//! - [`agents`]: oracle agents and the chat-completion backend
//! - [`orchestrator`]: run planning, execution and transcript persistence
//! - [`stats`]: probit, Wilcoxon rank-sum, demand curves and verdicts
//! - [`config`]: the JSON run configuration

pub mod agents;
pub mod config;
pub mod game;
pub mod money;
pub mod observation;
pub mod orchestrator;
pub mod prompt;
pub mod stats;
