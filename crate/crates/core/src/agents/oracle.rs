//! Scripted agents implementing the economic mechanisms directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentError, AgentFactory, AgentResponse, BackendIdentity, DecisionAgent, DecisionRequest};
use crate::game::{
    CrowdfundRoundConfig, InventionQuality, ProductValue, QueueCondition, QueueObservation, QueueRole, Regime,
    Report, COHORT_SIZE,
};
use crate::observation::{Decision, Observation, Vocabulary};
use crate::stats::normal;

/// Distribution of demand-survey reservation prices (relative to the
/// regular price).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReservationDistribution {
    Uniform { low: f64, high: f64 },
}

impl ReservationDistribution {
    pub fn sample(&self, draw: f64) -> f64 {
        match *self {
            ReservationDistribution::Uniform { low, high } => low + (high - low) * draw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    /// Scale of the probit smoothing applied to value comparisons; 0 makes
    /// oracles deterministic.
    pub noise_scale: f64,
    pub bad_inventor_offer_prob: f64,
    /// Posterior at which an investor is indifferent without a bonus.
    pub investor_threshold: f64,
    pub reservation_distribution: ReservationDistribution,
}

impl Default for OracleParams {
    fn default() -> Self {
        Self {
            noise_scale: 0.35,
            bad_inventor_offer_prob: 0.2,
            investor_threshold: 0.5,
            reservation_distribution: ReservationDistribution::Uniform { low: 0.0, high: 2.0 },
        }
    }
}

impl OracleParams {
    pub fn deterministic() -> Self {
        Self {
            noise_scale: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(AgentError::Config(format!(
                "oracle.noise_scale must be a finite non-negative number, got {}",
                self.noise_scale
            )));
        }
        for (name, p) in [
            ("bad_inventor_offer_prob", self.bad_inventor_offer_prob),
            ("investor_threshold", self.investor_threshold),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(AgentError::Config(format!("oracle.{name} must be in [0, 1], got {p}")));
            }
        }
        let ReservationDistribution::Uniform { low, high } = self.reservation_distribution;
        if !(low.is_finite() && high.is_finite() && low >= 0.0 && high > low) {
            return Err(AgentError::Config(format!(
                "oracle.reservation_distribution needs 0 <= low < high, got [{low}, {high})"
            )));
        }
        Ok(())
    }
}

/// `true` (the risky action) with probability Φ(margin / noise); with zero
/// noise, iff margin >= 0.
fn smoothed_choice(margin: f64, noise: f64, draw: f64) -> bool {
    if noise == 0.0 {
        margin >= 0.0
    } else {
        draw < normal::cdf(margin / noise)
    }
}

/// Uninformed rule of thumb: order iff 4 − w + 1.75 exceeds the endowment of
/// 4, i.e. only at w = 1. Informed subjects order iff value exceeds the wait.
pub fn ev_heuristic_decide(obs: &QueueObservation) -> bool {
    let w = f64::from(obs.wait_time);
    match obs.role {
        QueueRole::Uninformed => 4.0 - w + 1.75 > 4.0,
        QueueRole::Informed(v) => v.cents().as_dollars() - w > 0.0,
    }
}

/// Predecessor behaviour assumed by the Bayesian oracle.
#[derive(Debug, Clone, Copy)]
pub struct StrategyProfile {
    pub informed_orders: fn(ProductValue, u8) -> bool,
    pub uninformed_orders: fn(u8) -> bool,
}

impl Default for StrategyProfile {
    /// Informed subjects order iff the value exceeds the wait; uninformed
    /// subjects order only at the minimal wait.
    fn default() -> Self {
        Self {
            informed_orders: |v, w| v.cents().as_dollars() > f64::from(w),
            uninformed_orders: |w| w == 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueuePosterior {
    pub p_high: f64,
    /// The observation has probability zero under the profile; `p_high` is
    /// then the prior.
    pub degenerate: bool,
}

/// Probability that `remaining` predecessors, starting from `purchases`
/// earlier orders, end with exactly `target` purchases.
fn path_probability(
    value: ProductValue,
    informed_share: f64,
    remaining: usize,
    purchases: u8,
    target: u8,
    profile: &StrategyProfile,
) -> f64 {
    if purchases > target {
        return 0.0;
    }
    if remaining == 0 {
        return if purchases == target { 1.0 } else { 0.0 };
    }
    let w = 1 + purchases;
    let mut total = 0.0;
    let roles = [(informed_share, true), (1.0 - informed_share, false)];
    for (p_role, informed) in roles {
        if p_role == 0.0 {
            continue;
        }
        let orders = if informed {
            (profile.informed_orders)(value, w)
        } else {
            (profile.uninformed_orders)(w)
        };
        let next = purchases + u8::from(orders);
        total += p_role * path_probability(value, informed_share, remaining - 1, next, target, profile);
    }
    total
}

/// P(high value | own position and wait time) by enumerating every
/// predecessor role assignment and product value.
pub fn bayes_posterior_queue(
    condition: QueueCondition,
    position: u8,
    wait_time: u8,
    profile: &StrategyProfile,
) -> Result<QueuePosterior, AgentError> {
    if !(1..=COHORT_SIZE as u8).contains(&position) {
        return Err(AgentError::Usage(format!("position must be in 1..=4, got {position}")));
    }
    if !(1..=position).contains(&wait_time) {
        return Err(AgentError::Usage(format!(
            "wait time {wait_time} impossible at position {position}"
        )));
    }
    let share = condition.informed_share();
    let like = |v| path_probability(v, share, usize::from(position - 1), 0, wait_time - 1, profile);
    let high = 0.5 * like(ProductValue::High);
    let low = 0.5 * like(ProductValue::Low);
    if high + low == 0.0 {
        return Ok(QueuePosterior {
            p_high: 0.5,
            degenerate: true,
        });
    }
    Ok(QueuePosterior {
        p_high: high / (high + low),
        degenerate: false,
    })
}

/// Order iff the expected value `3.5 p` covers the wait (ties order), or
/// with probability Φ((3.5 p − w) / noise).
pub fn bayes_decide_queue(posterior: f64, wait_time: u8, noise_scale: f64, draw: f64) -> bool {
    let margin = posterior * ProductValue::High.cents().as_dollars() - f64::from(wait_time);
    smoothed_choice(margin, noise_scale, draw)
}

/// Bonus offer of an inventor who observed the quality under EB.
pub fn crowdfund_oracle_inventor(
    quality: InventionQuality,
    regime: Regime,
    params: &OracleParams,
    draw: f64,
) -> Result<bool, AgentError> {
    if regime == Regime::RB {
        return Err(AgentError::Usage("inventors do not choose bonuses under RB".into()));
    }
    Ok(match quality {
        InventionQuality::Good => true,
        InventionQuality::Bad => draw < params.bad_inventor_offer_prob,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvestorAssessment {
    pub posterior: f64,
    /// Expected return per invested dollar.
    pub value: f64,
    pub invest: bool,
}

pub fn investor_posterior(report: Report, bonus_offered: bool, regime: Regime, params: &OracleParams) -> f64 {
    if report == Report::Negative {
        return 0.0;
    }
    match (regime, bonus_offered) {
        (Regime::RB, _) => 0.5,
        (Regime::EB, true) => 0.5 / (0.5 + 0.5 * params.bad_inventor_offer_prob),
        (Regime::EB, false) => 0.0,
    }
}

/// Investor oracle: posterior from the report and (under EB) the bonus, then
/// invest when the expected dollar return reaches the safe return.
pub fn crowdfund_oracle_investor(
    report: Report,
    bonus_offered: bool,
    regime: Regime,
    params: &OracleParams,
    draw: f64,
) -> InvestorAssessment {
    let cfg = CrowdfundRoundConfig::new(regime);
    let posterior = investor_posterior(report, bonus_offered, regime, params);
    let good = cfg.good_return.as_dollars();
    let mut value = good * posterior;
    if bonus_offered {
        // a lone investor is refunded with the bonus
        value = value.max(1.0 + cfg.bonus_amount.as_dollars());
    }
    let invest = report != Report::Negative
        && smoothed_choice(value - good * params.investor_threshold, params.noise_scale, draw);
    InvestorAssessment { posterior, value, invest }
}

pub fn reservation_price_decide(relative_price: f64, reservation: f64) -> bool {
    reservation >= relative_price
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Ev,
    Bayes,
    Crowdfund,
    Reservation,
}

impl OracleKind {
    fn name(self) -> &'static str {
        match self {
            OracleKind::Ev => "oracle-ev",
            OracleKind::Bayes => "oracle-bayes",
            OracleKind::Crowdfund => "oracle-crowdfund",
            OracleKind::Reservation => "oracle-reservation",
        }
    }
}

pub struct OracleFactory {
    kind: OracleKind,
    params: OracleParams,
    profile: StrategyProfile,
}

impl OracleFactory {
    pub fn new(kind: OracleKind, params: OracleParams) -> Self {
        Self {
            kind,
            params,
            profile: StrategyProfile::default(),
        }
    }
}

impl AgentFactory for OracleFactory {
    fn spawn(&self, seed: u64) -> Box<dyn DecisionAgent> {
        Box::new(OracleAgent {
            kind: self.kind,
            params: self.params,
            profile: self.profile,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn identity(&self) -> BackendIdentity {
        BackendIdentity {
            backend: self.kind.name().into(),
            model: None,
        }
    }
}

pub struct OracleAgent {
    kind: OracleKind,
    params: OracleParams,
    profile: StrategyProfile,
    rng: ChaCha8Rng,
}

fn answer(reason: String, decision: Decision) -> AgentResponse {
    AgentResponse::scripted(format!("<reason>{reason}</reason>\n<answer>{}</answer>", decision.token()))
}

impl DecisionAgent for OracleAgent {
    fn respond(&mut self, request: &DecisionRequest) -> Result<AgentResponse, AgentError> {
        let draw: f64 = self.rng.gen();
        let noise = self.params.noise_scale;
        match (self.kind, &request.observation) {
            (OracleKind::Ev, Observation::Queue(obs)) => {
                let order = ev_heuristic_decide(obs);
                let reason = format!(
                    "Expected value of ordering at wait {} is {:.2} against 4.00 for not ordering.",
                    obs.wait_time,
                    4.0 - f64::from(obs.wait_time) + 1.75
                );
                Ok(answer(reason, Vocabulary::Queue.choose(order)))
            }
            (OracleKind::Bayes, Observation::Queue(obs)) => {
                let (order, reason) = match obs.role {
                    QueueRole::Informed(v) => {
                        let margin = v.cents().as_dollars() - f64::from(obs.wait_time);
                        (
                            smoothed_choice(margin, noise, draw),
                            format!("Known value {} against wait {}.", v.cents(), obs.wait_time),
                        )
                    }
                    QueueRole::Uninformed => {
                        let post = bayes_posterior_queue(obs.condition, obs.position, obs.wait_time, &self.profile)?;
                        (
                            bayes_decide_queue(post.p_high, obs.wait_time, noise, draw),
                            format!(
                                "Posterior probability of high value {:.3}; expected value {:.3} against wait {}.",
                                post.p_high,
                                post.p_high * 3.5,
                                obs.wait_time
                            ),
                        )
                    }
                };
                Ok(answer(reason, Vocabulary::Queue.choose(order)))
            }
            (OracleKind::Crowdfund, Observation::Inventor(obs)) => {
                let offer = crowdfund_oracle_inventor(obs.quality, obs.regime, &self.params, draw)?;
                let reason = format!("The invention is {:?}.", obs.quality).to_lowercase();
                Ok(answer(reason, Vocabulary::Inventor.choose(offer)))
            }
            (OracleKind::Crowdfund, Observation::Investor(obs)) => {
                let a = crowdfund_oracle_investor(obs.report, obs.bonus_offered, obs.regime, &self.params, draw);
                let reason = format!(
                    "Posterior probability of a good invention {:.3}; expected return {:.2} per dollar.",
                    a.posterior, a.value
                );
                Ok(answer(reason, Vocabulary::Investor.choose(a.invest)))
            }
            (OracleKind::Reservation, Observation::Demand(obs)) => {
                let r = self.params.reservation_distribution.sample(draw);
                let buy = reservation_price_decide(obs.relative_price, r);
                let reason = format!(
                    "Willing to pay {:.0}% of the regular price; asked {:.0}%.",
                    r * 100.0,
                    obs.relative_price * 100.0
                );
                Ok(answer(reason, Vocabulary::Demand.choose(buy)))
            }
            (kind, obs) => Err(AgentError::Usage(format!(
                "{} cannot decide on a {} observation",
                kind.name(),
                obs.experiment()
            ))),
        }
    }
}
