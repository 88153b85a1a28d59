//! Sequential purchase game with an endogenous delivery queue.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::GameError;
use crate::money::Cents;

pub const COHORT_SIZE: usize = 4;
pub const ENDOWMENT: Cents = Cents(400);
pub const WAIT_COST_PER_PERIOD: Cents = Cents(100);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProductValue {
    High,
    Low,
}

impl ProductValue {
    pub const ALL: [ProductValue; 2] = [ProductValue::High, ProductValue::Low];

    pub fn cents(self) -> Cents {
        match self {
            ProductValue::High => Cents(350),
            ProductValue::Low => Cents(0),
        }
    }

    /// Maps a unit-uniform draw to a value, each with probability one half.
    pub fn from_draw(draw: f64) -> Self {
        if draw < 0.5 {
            ProductValue::High
        } else {
            ProductValue::Low
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum QueueCondition {
    Q00,
    Q50,
}

impl QueueCondition {
    /// Probability that any single subject is informed.
    pub fn informed_share(self) -> f64 {
        match self {
            QueueCondition::Q00 => 0.0,
            QueueCondition::Q50 => 0.5,
        }
    }
}

impl fmt::Display for QueueCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QueueCondition::Q00 => f.write_str("Q00"),
            QueueCondition::Q50 => f.write_str("Q50"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum QueueRole {
    Informed(ProductValue),
    Uninformed,
}

impl QueueRole {
    pub fn is_informed(self) -> bool {
        matches!(self, QueueRole::Informed(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueueDecision {
    Order,
    NotOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueObservation {
    /// 1-based arrival position; not shown in prompts, available to oracles.
    pub position: u8,
    pub wait_time: u8,
    pub role: QueueRole,
    pub condition: QueueCondition,
}

/// Delivery wait: one production period plus every earlier purchase.
pub fn queue_wait_time(prior_purchases: u8) -> Result<u8, GameError> {
    if prior_purchases as usize >= COHORT_SIZE {
        return Err(GameError::Domain(format!(
            "prior purchases must be in 0..=3, got {prior_purchases}"
        )));
    }
    Ok(1 + prior_purchases)
}

pub fn queue_payoff(decision: QueueDecision, value: ProductValue, wait_time: u8) -> Cents {
    debug_assert!(wait_time >= 1);
    match decision {
        QueueDecision::NotOrder => ENDOWMENT,
        QueueDecision::Order => ENDOWMENT + value.cents() - WAIT_COST_PER_PERIOD * wait_time as i64,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueCohortState {
    pub product_value: ProductValue,
    pub condition: QueueCondition,
    decisions: Vec<(QueueRole, QueueDecision)>,
}

impl QueueCohortState {
    pub fn new(product_value: ProductValue, condition: QueueCondition) -> Self {
        Self {
            product_value,
            condition,
            decisions: Vec::with_capacity(COHORT_SIZE),
        }
    }

    /// 1-based position of the next subject to decide.
    pub fn position(&self) -> usize {
        self.decisions.len() + 1
    }

    pub fn prior_purchases(&self) -> u8 {
        self.decisions
            .iter()
            .filter(|(_, d)| *d == QueueDecision::Order)
            .count() as u8
    }

    pub fn is_complete(&self) -> bool {
        self.decisions.len() == COHORT_SIZE
    }

    pub fn decisions(&self) -> &[(QueueRole, QueueDecision)] {
        &self.decisions
    }

    pub fn observation(&self, role: QueueRole) -> Result<QueueObservation, GameError> {
        if self.is_complete() {
            return Err(GameError::State("cohort already has four decisions".into()));
        }
        if role.is_informed() && self.condition == QueueCondition::Q00 {
            return Err(GameError::Domain("informed role under Q00".into()));
        }
        Ok(QueueObservation {
            position: self.position() as u8,
            wait_time: queue_wait_time(self.prior_purchases())?,
            role,
            condition: self.condition,
        })
    }

    pub fn step(mut self, role: QueueRole, decision: QueueDecision) -> Result<Self, GameError> {
        if self.is_complete() {
            return Err(GameError::State("cannot step a completed cohort".into()));
        }
        self.decisions.push((role, decision));
        Ok(self)
    }
}
