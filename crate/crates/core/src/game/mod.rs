//! Payoff rules and state machines for the three economies.
//!
//! Everything here is a pure function of its inputs. Random draws are taken
//! as arguments so the orchestrator owns every source of randomness.

pub mod crowdfund;
pub mod demand;
pub mod queue;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GameError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("state error: {0}")]
    State(String),
    #[error("config error: {0}")]
    Config(String),
}

pub use crowdfund::{
    crowdfund_resolve, crowdfund_signal, crowdfund_signal_with, CrowdfundOutcome, CrowdfundRoundConfig,
    CrowdfundRoundState, InventionOutcome, InventionQuality, InventionState, InvestorLedger,
    Regime, Report, INVENTIONS_PER_GAME, INVESTORS_PER_GAME, PRIOR_GOOD,
};
pub use demand::{default_catalog, demand_grid, load_catalog, parse_catalog, DemandCell, Product, PRICE_LEVELS};
pub use queue::{
    queue_payoff, queue_wait_time, ProductValue, QueueCohortState, QueueCondition, QueueDecision,
    QueueObservation, QueueRole, COHORT_SIZE,
};
