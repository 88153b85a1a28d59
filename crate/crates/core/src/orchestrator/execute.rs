//! Executors for the three kinds of run units.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::transcript::{queue_role_label, RecordContext, TranscriptRecord, TRANSCRIPT_SCHEMA_VERSION};
use super::{derive_seed, InformedMode, OrchestratorError, RunConfig, UnitKind, UnitPlan, GAME_SIZE};
use crate::agents::{AgentFactory, DecisionRequest, TokenUsage};
use crate::game::{
    crowdfund_resolve, crowdfund_signal_with, queue_payoff, CrowdfundRoundConfig, CrowdfundRoundState, DemandCell,
    InventionQuality, InventionState, ProductValue, QueueCohortState, QueueCondition, QueueDecision, QueueRole,
    Regime, COHORT_SIZE, INVENTIONS_PER_GAME, INVESTORS_PER_GAME,
};
use crate::observation::{
    Decision, DemandObservation, InventorObservation, InvestorObservation, Observation,
};
use crate::prompt::{
    assemble_session, format_reminder, parse_decision, render_round, Assignment, Message, PromptTemplateSet, Role,
};

/// Shared, read-only inputs of every unit in a run.
pub struct UnitContext<'a> {
    pub run_id: &'a str,
    pub config: &'a RunConfig,
    pub templates: &'a PromptTemplateSet,
    pub factory: &'a dyn AgentFactory,
}

/// Condition, value draw and roles of one queue cohort.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortAssignment {
    pub condition: QueueCondition,
    pub product_value: ProductValue,
    pub roles: [QueueRole; COHORT_SIZE],
}

impl CohortAssignment {
    pub fn draw(condition: QueueCondition, mode: InformedMode, rng: &mut impl Rng) -> Self {
        let product_value = ProductValue::from_draw(rng.gen());
        let informed = QueueRole::Informed(product_value);
        let mut roles = [QueueRole::Uninformed; COHORT_SIZE];
        if condition == QueueCondition::Q50 {
            match mode {
                InformedMode::Bernoulli => {
                    for r in roles.iter_mut() {
                        if rng.gen::<f64>() < condition.informed_share() {
                            *r = informed;
                        }
                    }
                }
                InformedMode::Stratified => {
                    let mut order: Vec<usize> = (0..COHORT_SIZE).collect();
                    order.shuffle(rng);
                    for &i in &order[..COHORT_SIZE / 2] {
                        roles[i] = informed;
                    }
                }
            }
        }
        Self {
            condition,
            product_value,
            roles,
        }
    }
}

/// Outcome of one decision event before it is wrapped in a record.
struct Decided {
    messages: Vec<Message>,
    raw_response: String,
    first_response: Option<String>,
    decision: Option<Decision>,
    reason: String,
    diagnostic: Option<String>,
    latency_ms: u64,
    usage: Option<TokenUsage>,
    retries: u32,
}

fn add_usage(a: Option<TokenUsage>, b: Option<TokenUsage>) -> Option<TokenUsage> {
    match (a, b) {
        (Some(a), Some(b)) => Some(TokenUsage {
            prompt_tokens: a.prompt_tokens + b.prompt_tokens,
            completion_tokens: a.completion_tokens + b.completion_tokens,
            total_tokens: a.total_tokens + b.total_tokens,
        }),
        (a, b) => a.or(b),
    }
}

/// Spawns a fresh agent and asks for one decision, re-prompting once with a
/// format reminder when the first answer does not parse.
fn decide(
    ctx: &UnitContext<'_>,
    seed: u64,
    assignment: &Assignment,
    observation: Observation,
) -> Result<(Decided, Observation), OrchestratorError> {
    let design = ctx.config.design;
    let vocabulary = observation.vocabulary();
    let mut request = DecisionRequest {
        session_messages: assemble_session(design, ctx.templates, assignment)?,
        round_message: render_round(design, ctx.templates, &observation)?,
        followup: Vec::new(),
        experiment: observation.experiment(),
        vocabulary,
        observation,
    };
    let mut agent = ctx.factory.spawn(seed);
    let first = agent.respond(&request)?;
    let mut parsed = parse_decision(&first.text, vocabulary);
    let mut decided = Decided {
        messages: Vec::new(),
        raw_response: first.text.clone(),
        first_response: None,
        decision: None,
        reason: String::new(),
        diagnostic: None,
        latency_ms: first.latency_ms,
        usage: first.usage,
        retries: first.retries,
    };
    if !parsed.valid {
        request.followup = vec![
            Message::new(Role::Agent, first.text.clone()),
            Message::new(Role::Experimenter, format_reminder(vocabulary)),
        ];
        let second = agent.respond(&request)?;
        parsed = parse_decision(&second.text, vocabulary);
        decided.first_response = Some(first.text);
        decided.raw_response = second.text;
        decided.latency_ms += second.latency_ms;
        decided.usage = add_usage(decided.usage, second.usage);
        decided.retries += second.retries;
    }
    decided.messages = request.messages();
    decided.decision = parsed.decision;
    decided.reason = parsed.reason;
    decided.diagnostic = parsed.diagnostic;
    Ok((decided, request.observation))
}

struct RecordIds {
    unit_label: String,
    round: Option<u8>,
    position: Option<u8>,
    subject: Option<u8>,
    condition: String,
    role: String,
}

fn record(
    ctx: &UnitContext<'_>,
    unit: &UnitPlan,
    ids: RecordIds,
    observation: Observation,
    context: RecordContext,
    decided: Decided,
) -> TranscriptRecord {
    TranscriptRecord {
        schema_version: TRANSCRIPT_SCHEMA_VERSION,
        run_id: ctx.run_id.to_string(),
        experiment: ctx.config.experiment,
        design: ctx.config.design,
        unit_index: unit.index,
        unit_label: ids.unit_label,
        round: ids.round,
        position: ids.position,
        subject: ids.subject,
        condition: ids.condition,
        role: ids.role,
        observation,
        context,
        messages: decided.messages,
        raw_response: decided.raw_response,
        first_response: decided.first_response,
        valid: decided.decision.is_some(),
        decision: decided.decision,
        reason: decided.reason,
        diagnostic: decided.diagnostic,
        payoff: None,
        latency_ms: decided.latency_ms,
        usage: decided.usage,
        retries: decided.retries,
    }
}

pub(super) fn execute_unit(ctx: &UnitContext<'_>, unit: &UnitPlan) -> Result<Vec<TranscriptRecord>, OrchestratorError> {
    match &unit.kind {
        UnitKind::QueueCohort { condition } => {
            let mut rng = ChaCha8Rng::seed_from_u64(unit.seed);
            let assignment = CohortAssignment::draw(*condition, ctx.config.informed_assignment, &mut rng);
            execute_queue_cohort(ctx, unit, &assignment)
        }
        UnitKind::CrowdfundGroup { regime } => execute_crowdfund_group(ctx, unit, *regime),
        UnitKind::DemandCell { cell } => execute_demand_cell(ctx, unit, cell),
    }
}

/// Four sequential decisions; each wait time follows from the parsed
/// decisions before it. Invalid decisions advance the queue as NotOrder.
pub fn execute_queue_cohort(
    ctx: &UnitContext<'_>,
    unit: &UnitPlan,
    assignment: &CohortAssignment,
) -> Result<Vec<TranscriptRecord>, OrchestratorError> {
    let session = Assignment::Queue {
        condition: assignment.condition,
    };
    let mut state = QueueCohortState::new(assignment.product_value, assignment.condition);
    let mut records = Vec::with_capacity(COHORT_SIZE);
    for (i, &role) in assignment.roles.iter().enumerate() {
        let obs = state.observation(role)?;
        let (decided, observation) = decide(ctx, derive_seed(unit.seed, i as u64), &session, Observation::Queue(obs))?;
        let decision = if decided.decision == Some(Decision::Order) {
            QueueDecision::Order
        } else {
            QueueDecision::NotOrder
        };
        let ids = RecordIds {
            unit_label: unit.label.clone(),
            round: None,
            position: Some(obs.position),
            subject: None,
            condition: assignment.condition.to_string(),
            role: queue_role_label(role),
        };
        let context = RecordContext::Queue {
            product_value: assignment.product_value,
        };
        let mut rec = record(ctx, unit, ids, observation, context, decided);
        rec.payoff = Some(queue_payoff(decision, assignment.product_value, obs.wait_time));
        records.push(rec);
        state = state.step(role, decision)?;
    }
    Ok(records)
}

/// Plays every round of one matching group. Each round the group is
/// re-partitioned at random into games of four; within a game the first two
/// seats are inventors and the last two investors.
pub fn execute_crowdfund_group(
    ctx: &UnitContext<'_>,
    unit: &UnitPlan,
    regime: Regime,
) -> Result<Vec<TranscriptRecord>, OrchestratorError> {
    let plan = &ctx.config.sample_plan.crowdfund;
    let mut round_config = CrowdfundRoundConfig::new(regime);
    round_config.inventor_funded_revenue = ctx.config.inventor_revenue;
    round_config.validate()?;
    let session = Assignment::Crowdfund {
        regime,
        inventor_revenue: ctx.config.inventor_revenue,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(unit.seed);
    let mut decision_index = 0u64;
    let mut next_seed = || {
        decision_index += 1;
        derive_seed(unit.seed, decision_index)
    };
    let mut subjects: Vec<u8> = (0..plan.group_size as u8).collect();
    let mut records = Vec::new();
    for round in 1..=plan.rounds as u8 {
        subjects.shuffle(&mut rng);
        for (g, seats) in subjects.chunks(GAME_SIZE).enumerate() {
            let game = g as u8;
            let (inventors, investors) = seats.split_at(INVENTIONS_PER_GAME);
            let ids = |subject: u8, role: &str| RecordIds {
                unit_label: unit.label.clone(),
                round: Some(round),
                position: None,
                subject: Some(subject),
                condition: regime.to_string(),
                role: role.to_string(),
            };

            let mut inventions = Vec::with_capacity(INVENTIONS_PER_GAME);
            let mut inventor_records = Vec::new();
            for &inventor in inventors {
                let quality = InventionQuality::from_draw(rng.gen());
                let signal_draw: f64 = rng.gen();
                let bonus_draw: f64 = rng.gen();
                let report = crowdfund_signal_with(quality, signal_draw, round_config.neg_report_prob);
                let bonus_offered = match regime {
                    Regime::RB => bonus_draw < round_config.rb_bonus_prob,
                    Regime::EB => {
                        let obs = Observation::Inventor(InventorObservation { regime, quality });
                        let (decided, observation) = decide(ctx, next_seed(), &session, obs)?;
                        let offer = decided.decision == Some(Decision::Offer);
                        inventor_records.push(record(
                            ctx,
                            unit,
                            ids(inventor, "inventor"),
                            observation,
                            RecordContext::Inventor {
                                game,
                                invention: inventions.len() as u8,
                                funded: false,
                            },
                            decided,
                        ));
                        offer
                    }
                };
                inventions.push(InventionState {
                    quality,
                    bonus_offered,
                    report,
                });
            }

            let mut invest = vec![vec![false; INVENTIONS_PER_GAME]; INVESTORS_PER_GAME];
            let mut investor_records = Vec::new();
            for (i, &investor) in investors.iter().enumerate() {
                for (j, inv) in inventions.iter().enumerate() {
                    let obs = Observation::Investor(InvestorObservation {
                        regime,
                        invention: j as u8,
                        bonus_offered: inv.bonus_offered,
                        report: inv.report,
                    });
                    let (decided, observation) = decide(ctx, next_seed(), &session, obs)?;
                    invest[i][j] = decided.decision == Some(Decision::Invest);
                    investor_records.push((
                        i,
                        j,
                        record(
                            ctx,
                            unit,
                            ids(investor, "investor"),
                            observation,
                            RecordContext::Investor {
                                game,
                                invention: j as u8,
                                quality: inv.quality,
                                bonus_offered: inv.bonus_offered,
                                funded: false,
                            },
                            decided,
                        ),
                    ));
                }
            }

            let state = CrowdfundRoundState::new(&inventions, &invest)?;
            let outcome = crowdfund_resolve(&round_config, &state)?;
            for mut rec in inventor_records {
                if let RecordContext::Inventor { invention, funded, .. } = &mut rec.context {
                    let j = *invention as usize;
                    *funded = outcome.inventions[j].funded;
                    rec.payoff = Some(outcome.inventors[j]);
                }
                records.push(rec);
            }
            for (i, j, mut rec) in investor_records {
                if let RecordContext::Investor { funded, .. } = &mut rec.context {
                    *funded = outcome.inventions[j].funded;
                }
                rec.payoff = Some(outcome.investors[i].per_dollar[j]);
                records.push(rec);
            }
        }
    }
    Ok(records)
}

/// Independent one-shot purchase decisions at one product and price level.
pub fn execute_demand_cell(
    ctx: &UnitContext<'_>,
    unit: &UnitPlan,
    cell: &DemandCell,
) -> Result<Vec<TranscriptRecord>, OrchestratorError> {
    let n = ctx.config.sample_plan.demand.decisions_per_cell;
    let mut records = Vec::with_capacity(n as usize);
    for replicate in 0..n {
        let obs = Observation::Demand(DemandObservation {
            product_id: cell.product_id,
            product_name: cell.product_name.clone(),
            level_index: cell.level_index,
            relative_price: cell.relative_price,
            display_price: cell.display_price,
        });
        let (decided, observation) = decide(ctx, derive_seed(unit.seed, u64::from(replicate)), &Assignment::Demand, obs)?;
        let ids = RecordIds {
            unit_label: unit.label.clone(),
            round: None,
            position: None,
            subject: None,
            condition: format!("{:.1}", cell.relative_price),
            role: "consumer".into(),
        };
        let context = RecordContext::Demand {
            product_id: cell.product_id,
            level_index: cell.level_index,
            replicate,
        };
        records.push(record(ctx, unit, ids, observation, context, decided));
    }
    Ok(records)
}
