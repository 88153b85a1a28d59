//! What a subject sees before deciding, and the actions it can take.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::game::{InventionQuality, QueueObservation, Regime, Report};
use crate::money::Cents;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Queue,
    Crowdfund,
    Demand,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 3] = [ExperimentId::Queue, ExperimentId::Crowdfund, ExperimentId::Demand];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Queue => "queue",
            ExperimentId::Crowdfund => "crowdfund",
            ExperimentId::Demand => "demand",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentId::Queue => "sequential purchases with queue-length quality signals (Q00 vs Q50)",
            ExperimentId::Crowdfund => "crowdfunding with refund bonuses (EB vs RB)",
            ExperimentId::Demand => "price survey over 40 products and 11 relative price levels",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "queue" => Ok(ExperimentId::Queue),
            "crowdfund" => Ok(ExperimentId::Crowdfund),
            "demand" => Ok(ExperimentId::Demand),
            other => Err(format!("unknown experiment `{other}` (expected queue, crowdfund or demand)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandObservation {
    pub product_id: u32,
    pub product_name: String,
    pub level_index: u8,
    pub relative_price: f64,
    pub display_price: Cents,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventorObservation {
    pub regime: Regime,
    pub quality: InventionQuality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvestorObservation {
    pub regime: Regime,
    /// 0 or 1 within the game.
    pub invention: u8,
    pub bonus_offered: bool,
    pub report: Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    Queue(QueueObservation),
    Demand(DemandObservation),
    Inventor(InventorObservation),
    Investor(InvestorObservation),
}

impl Observation {
    pub fn experiment(&self) -> ExperimentId {
        match self {
            Observation::Queue(_) => ExperimentId::Queue,
            Observation::Demand(_) => ExperimentId::Demand,
            Observation::Inventor(_) | Observation::Investor(_) => ExperimentId::Crowdfund,
        }
    }

    pub fn vocabulary(&self) -> Vocabulary {
        match self {
            Observation::Queue(_) => Vocabulary::Queue,
            Observation::Demand(_) => Vocabulary::Demand,
            Observation::Inventor(_) => Vocabulary::Inventor,
            Observation::Investor(_) => Vocabulary::Investor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Order,
    NotOrder,
    Purchase,
    NotPurchase,
    Invest,
    NotInvest,
    Offer,
    NotOffer,
}

impl Decision {
    pub fn token(self) -> &'static str {
        match self {
            Decision::Order => "ORDER",
            Decision::NotOrder => "NOT ORDER",
            Decision::Purchase => "PURCHASE",
            Decision::NotPurchase => "NOT PURCHASE",
            Decision::Invest => "INVEST",
            Decision::NotInvest => "NOT INVEST",
            Decision::Offer => "OFFER",
            Decision::NotOffer => "NOT OFFER",
        }
    }

    /// The risky / affirmative action of its vocabulary.
    pub fn is_affirmative(self) -> bool {
        matches!(
            self,
            Decision::Order | Decision::Purchase | Decision::Invest | Decision::Offer
        )
    }
}

/// Answer tokens accepted for one kind of decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vocabulary {
    Queue,
    Demand,
    Investor,
    Inventor,
}

impl Vocabulary {
    pub fn decisions(self) -> [Decision; 2] {
        match self {
            Vocabulary::Queue => [Decision::Order, Decision::NotOrder],
            Vocabulary::Demand => [Decision::Purchase, Decision::NotPurchase],
            Vocabulary::Investor => [Decision::Invest, Decision::NotInvest],
            Vocabulary::Inventor => [Decision::Offer, Decision::NotOffer],
        }
    }

    pub fn affirmative(self) -> Decision {
        self.decisions()[0]
    }

    pub fn negative(self) -> Decision {
        self.decisions()[1]
    }

    pub fn choose(self, yes: bool) -> Decision {
        if yes {
            self.affirmative()
        } else {
            self.negative()
        }
    }

    pub fn contains(self, d: Decision) -> bool {
        self.decisions().contains(&d)
    }

    /// "ORDER/NOT ORDER"
    pub fn slash_list(self) -> String {
        let [a, b] = self.decisions();
        format!("{}/{}", a.token(), b.token())
    }
}
