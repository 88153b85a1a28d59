//! Prompt composition and response parsing.
//!
//! A session is the fixed message prefix every subject receives; each decision
//! then appends one round message. The three designs nest:
//!
//! | design   | session                                          | round suffix          |
//! |----------|--------------------------------------------------|-----------------------|
//! | baseline | instruction, confirmation                         | chain-of-thought      |
//! | cf       | formation prelude, instruction, confirmation     | chain-of-thought      |
//! | cfn      | formation prelude, instruction, confirmation     | chain-of-thought, navigation |

mod parse;
mod template;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use parse::{format_reminder, parse_decision, ParsedDecision};
pub use template::{render, PromptTemplateSet, RoundTemplate};

use crate::game::{InventionQuality, ProductValue, QueueCondition, QueueRole, Regime, Report};
use crate::money::Cents;
use crate::observation::{ExperimentId, Observation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("config error: {0}")]
    Config(String),
    #[error("template error: {0}")]
    Template(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptDesign {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "cf")]
    ContextFormation,
    #[serde(rename = "cfn")]
    ContextFormationNavigation,
}

impl PromptDesign {
    pub const ALL: [PromptDesign; 3] = [
        PromptDesign::Baseline,
        PromptDesign::ContextFormation,
        PromptDesign::ContextFormationNavigation,
    ];

    pub fn has_formation(self) -> bool {
        !matches!(self, PromptDesign::Baseline)
    }

    pub fn has_navigation(self) -> bool {
        matches!(self, PromptDesign::ContextFormationNavigation)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            PromptDesign::Baseline => "baseline",
            PromptDesign::ContextFormation => "cf",
            PromptDesign::ContextFormationNavigation => "cfn",
        }
    }

    pub fn long_name(self) -> &'static str {
        match self {
            PromptDesign::Baseline => "Baseline",
            PromptDesign::ContextFormation => "Context Formation",
            PromptDesign::ContextFormationNavigation => "Context Formation and Navigation",
        }
    }
}

impl fmt::Display for PromptDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for PromptDesign {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(PromptDesign::Baseline),
            "cf" => Ok(PromptDesign::ContextFormation),
            "cfn" => Ok(PromptDesign::ContextFormationNavigation),
            other => Err(format!("unknown design `{other}` (expected baseline, cf or cfn)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    Experimenter,
    Agent,
}

impl Role {
    /// Chat-completion wire name.
    pub fn wire_name(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::Experimenter => "user",
            Role::Agent => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn new(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
        }
    }
}

/// Condition information a subject's session is rendered with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "lowercase")]
pub enum Assignment {
    Queue { condition: QueueCondition },
    Crowdfund { regime: Regime, inventor_revenue: Cents },
    Demand,
}

impl Assignment {
    pub fn experiment(&self) -> ExperimentId {
        match self {
            Assignment::Queue { .. } => ExperimentId::Queue,
            Assignment::Crowdfund { .. } => ExperimentId::Crowdfund,
            Assignment::Demand => ExperimentId::Demand,
        }
    }

    fn fields(&self) -> BTreeMap<&'static str, String> {
        match *self {
            Assignment::Queue { condition } => BTreeMap::from([("condition", condition.to_string())]),
            Assignment::Crowdfund {
                regime,
                inventor_revenue,
            } => BTreeMap::from([
                ("regime_name", regime.long_name().to_string()),
                ("inventor_revenue", inventor_revenue.to_string()),
            ]),
            Assignment::Demand => BTreeMap::new(),
        }
    }
}

pub fn assemble_session(
    design: PromptDesign,
    templates: &PromptTemplateSet,
    assignment: &Assignment,
) -> Result<Vec<Message>, PromptError> {
    if assignment.experiment() != templates.experiment {
        return Err(PromptError::Config(format!(
            "{} assignment used with {} templates",
            assignment.experiment(),
            templates.experiment
        )));
    }
    let fields = assignment.fields();
    let mut messages = Vec::with_capacity(3);
    if design.has_formation() {
        messages.push(Message::new(
            Role::System,
            render(&templates.formation_prelude, &fields)?,
        ));
    }
    messages.push(Message::new(
        Role::Experimenter,
        render(&templates.general_instruction, &fields)?,
    ));
    messages.push(Message::new(
        Role::Experimenter,
        render(&templates.compliance_confirmation, &fields)?,
    ));
    Ok(messages)
}

fn dollars_short(c: Cents) -> String {
    if c.0 % 100 == 0 && c.0 < 100 {
        format!("${}", c.0 / 100)
    } else {
        c.to_string()
    }
}

fn round_fields(observation: &Observation) -> Result<(&'static str, BTreeMap<&'static str, String>), PromptError> {
    Ok(match observation {
        Observation::Queue(q) => {
            let mut f = BTreeMap::from([
                ("wait_time", q.wait_time.to_string()),
                ("wait_cost", Cents(100 * q.wait_time as i64).to_string()),
            ]);
            match q.role {
                QueueRole::Uninformed => ("uninformed", f),
                QueueRole::Informed(v) => {
                    if q.condition == QueueCondition::Q00 {
                        return Err(PromptError::Template("informed observation under Q00".into()));
                    }
                    let label = match v {
                        ProductValue::High => "high",
                        ProductValue::Low => "low",
                    };
                    f.insert("value_label", label.to_string());
                    f.insert("value", dollars_short(v.cents()));
                    ("informed", f)
                }
            }
        }
        Observation::Demand(d) => (
            "default",
            BTreeMap::from([
                ("product_name", d.product_name.clone()),
                ("display_price", d.display_price.to_string()),
            ]),
        ),
        Observation::Inventor(i) => {
            if i.regime == Regime::RB {
                return Err(PromptError::Template(
                    "inventors do not choose bonuses under RB".into(),
                ));
            }
            let q = match i.quality {
                InventionQuality::Good => "good",
                InventionQuality::Bad => "bad",
            };
            ("inventor", BTreeMap::from([("quality", q.to_string())]))
        }
        Observation::Investor(i) => {
            let label = match i.invention {
                0 => "A",
                1 => "B",
                n => return Err(PromptError::Template(format!("no invention with index {n}"))),
            };
            let bonus = if i.bonus_offered {
                "This invention offers a refund bonus."
            } else {
                "This invention does not offer a refund bonus."
            };
            let report = match i.report {
                Report::Negative => "You received a negative report about this invention.",
                Report::None => "You did not receive a negative report about this invention.",
            };
            (
                "investor",
                BTreeMap::from([
                    ("invention_label", label.to_string()),
                    ("bonus_line", bonus.to_string()),
                    ("report_line", report.to_string()),
                ]),
            )
        }
    })
}

pub const SEGMENT_SEPARATOR: &str = "\n\n";

pub fn render_round(
    design: PromptDesign,
    templates: &PromptTemplateSet,
    observation: &Observation,
) -> Result<Message, PromptError> {
    if observation.experiment() != templates.experiment {
        return Err(PromptError::Template(format!(
            "{} observation used with {} templates",
            observation.experiment(),
            templates.experiment
        )));
    }
    let (variant, fields) = round_fields(observation)?;
    let round = templates
        .round(variant)
        .map_err(|e| PromptError::Template(e.to_string()))?;
    let mut text = render(&round.body, &fields)?;
    text.push_str(SEGMENT_SEPARATOR);
    text.push_str(&round.cot_suffix);
    if design.has_navigation() {
        text.push_str(SEGMENT_SEPARATOR);
        text.push_str(&templates.navigation_suffix);
    }
    Ok(Message::new(Role::Experimenter, text))
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Renders the seven verbatim prompt fragments through the live pipeline.
pub fn golden_renderings(
    sets: &BTreeMap<ExperimentId, PromptTemplateSet>,
) -> Result<Vec<(&'static str, String)>, PromptError> {
    let get = |e: ExperimentId| {
        sets.get(&e)
            .ok_or_else(|| PromptError::Config(format!("missing {e} templates")))
    };
    let queue = get(ExperimentId::Queue)?;
    let demand = get(ExperimentId::Demand)?;
    let crowd = get(ExperimentId::Crowdfund)?;
    let uninformed = queue.round("uninformed")?;
    let q50 = assemble_session(
        PromptDesign::ContextFormation,
        queue,
        &Assignment::Queue {
            condition: QueueCondition::Q50,
        },
    )?;
    let demand_session = assemble_session(PromptDesign::ContextFormation, demand, &Assignment::Demand)?;
    let rb = assemble_session(
        PromptDesign::ContextFormation,
        crowd,
        &Assignment::Crowdfund {
            regime: Regime::RB,
            inventor_revenue: Cents(200),
        },
    )?;
    Ok(vec![
        ("queue_cot.txt", uninformed.cot_suffix.clone()),
        ("queue_formation_q50.txt", q50[0].text.clone()),
        ("queue_navigation.txt", queue.navigation_suffix.clone()),
        ("demand_formation.txt", demand_session[0].text.clone()),
        ("demand_navigation.txt", demand.navigation_suffix.clone()),
        ("crowdfund_formation_rb.txt", rb[0].text.clone()),
        ("crowdfund_navigation.txt", crowd.navigation_suffix.clone()),
    ])
}

pub const BUNDLED_DIGESTS: &str = include_str!("../../templates/digests.sha256");

/// Parses `sha256  name` lines.
pub fn parse_digests(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| {
            let mut parts = l.split_whitespace();
            Some((parts.nth(1)?.to_string(), l.split_whitespace().next()?.to_string()))
        })
        .collect()
}

/// Names of golden prompts whose rendering does not match the recorded digest.
pub fn verify_goldens(
    sets: &BTreeMap<ExperimentId, PromptTemplateSet>,
    digests: &BTreeMap<String, String>,
) -> Result<Vec<String>, PromptError> {
    Ok(golden_renderings(sets)?
        .into_iter()
        .filter(|(name, text)| digests.get(*name) != Some(&sha256_hex(text)))
        .map(|(name, _)| name.to_string())
        .collect())
}

pub fn bundled_sets() -> BTreeMap<ExperimentId, PromptTemplateSet> {
    ExperimentId::ALL
        .into_iter()
        .map(|e| (e, PromptTemplateSet::bundled(e)))
        .collect()
}
