//! Two-inventor, two-investor crowdfunding round with optional refund bonuses.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::GameError;
use crate::money::Cents;

/// Prior probability that an invention is good.
pub const PRIOR_GOOD: f64 = 0.4286;
pub const INVENTIONS_PER_GAME: usize = 2;
pub const INVESTORS_PER_GAME: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InventionQuality {
    Good,
    Bad,
}

impl InventionQuality {
    pub fn from_draw(draw: f64) -> Self {
        if draw < PRIOR_GOOD {
            InventionQuality::Good
        } else {
            InventionQuality::Bad
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    EB,
    RB,
}

impl Regime {
    pub fn long_name(self) -> &'static str {
        match self {
            Regime::EB => "Endogenous Bonus",
            Regime::RB => "Random Bonus",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::EB => f.write_str("EB"),
            Regime::RB => f.write_str("RB"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Report {
    Negative,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdfundRoundConfig {
    pub regime: Regime,
    pub neg_report_prob: f64,
    pub rb_bonus_prob: f64,
    pub bonus_amount: Cents,
    pub good_return: Cents,
    pub safe_return: Cents,
    pub investor_endowment: Cents,
    pub inventor_funded_revenue: Cents,
}

impl CrowdfundRoundConfig {
    pub fn new(regime: Regime) -> Self {
        Self {
            regime,
            neg_report_prob: 0.25,
            rb_bonus_prob: 0.50,
            bonus_amount: Cents(100),
            good_return: Cents(300),
            safe_return: Cents(150),
            investor_endowment: Cents(200),
            inventor_funded_revenue: Cents(200),
        }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        for (name, p) in [
            ("neg_report_prob", self.neg_report_prob),
            ("rb_bonus_prob", self.rb_bonus_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GameError::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        for (name, c) in [
            ("bonus_amount", self.bonus_amount),
            ("good_return", self.good_return),
            ("safe_return", self.safe_return),
            ("investor_endowment", self.investor_endowment),
            ("inventor_funded_revenue", self.inventor_funded_revenue),
        ] {
            if c < Cents::ZERO {
                return Err(GameError::Config(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

/// Bad inventions trigger a negative report when `draw < 0.25`; good ones never do.
pub fn crowdfund_signal(quality: InventionQuality, draw: f64) -> Report {
    crowdfund_signal_with(quality, draw, 0.25)
}

pub fn crowdfund_signal_with(quality: InventionQuality, draw: f64, neg_report_prob: f64) -> Report {
    match quality {
        InventionQuality::Bad if draw < neg_report_prob => Report::Negative,
        _ => Report::None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventionState {
    pub quality: InventionQuality,
    pub bonus_offered: bool,
    pub report: Report,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrowdfundRoundState {
    inventions: [InventionState; INVENTIONS_PER_GAME],
    /// `invest[investor][invention]`
    invest: [[bool; INVENTIONS_PER_GAME]; INVESTORS_PER_GAME],
}

impl CrowdfundRoundState {
    pub fn new(inventions: &[InventionState], invest: &[Vec<bool>]) -> Result<Self, GameError> {
        let inventions: [InventionState; INVENTIONS_PER_GAME] = inventions
            .try_into()
            .map_err(|_| GameError::Domain(format!("expected 2 inventions, got {}", inventions.len())))?;
        for (i, inv) in inventions.iter().enumerate() {
            if inv.quality == InventionQuality::Good && inv.report == Report::Negative {
                return Err(GameError::Domain(format!(
                    "invention {i} is good but carries a negative report"
                )));
            }
        }
        if invest.len() != INVESTORS_PER_GAME {
            return Err(GameError::Domain(format!(
                "invest matrix needs 2 investor rows, got {}",
                invest.len()
            )));
        }
        let mut matrix = [[false; INVENTIONS_PER_GAME]; INVESTORS_PER_GAME];
        for (r, row) in invest.iter().enumerate() {
            if row.len() != INVENTIONS_PER_GAME {
                return Err(GameError::Domain(format!(
                    "investor row {r} has {} entries, expected 2",
                    row.len()
                )));
            }
            matrix[r].copy_from_slice(row);
        }
        Ok(Self {
            inventions,
            invest: matrix,
        })
    }

    pub fn inventions(&self) -> &[InventionState; INVENTIONS_PER_GAME] {
        &self.inventions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventionOutcome {
    pub funded: bool,
    pub investors_in: u8,
    pub bonus_paid: Cents,
}

/// What one investor received for each of their dollars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvestorLedger {
    pub per_dollar: [Cents; INVENTIONS_PER_GAME],
}

impl InvestorLedger {
    pub fn total(&self) -> Cents {
        self.per_dollar.iter().copied().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrowdfundOutcome {
    pub inventions: [InventionOutcome; INVENTIONS_PER_GAME],
    pub investors: [InvestorLedger; INVESTORS_PER_GAME],
    pub inventors: [Cents; INVENTIONS_PER_GAME],
}

/// Settles one round. A lone investor gets the dollar back, plus the bonus if
/// one was offered; refunded dollars do not also earn the safe return.
pub fn crowdfund_resolve(
    config: &CrowdfundRoundConfig,
    state: &CrowdfundRoundState,
) -> Result<CrowdfundOutcome, GameError> {
    config.validate()?;
    let mut inventions = [InventionOutcome {
        funded: false,
        investors_in: 0,
        bonus_paid: Cents::ZERO,
    }; INVENTIONS_PER_GAME];
    let mut investors = [InvestorLedger {
        per_dollar: [Cents::ZERO; INVENTIONS_PER_GAME],
    }; INVESTORS_PER_GAME];
    let mut inventors = [Cents::ZERO; INVENTIONS_PER_GAME];

    for (j, invention) in state.inventions.iter().enumerate() {
        let investors_in = (0..INVESTORS_PER_GAME)
            .filter(|&i| state.invest[i][j])
            .count() as u8;
        let funded = investors_in as usize == INVESTORS_PER_GAME;
        let lone = investors_in == 1;
        for (i, ledger) in investors.iter_mut().enumerate() {
            ledger.per_dollar[j] = if !state.invest[i][j] {
                config.safe_return
            } else if funded {
                match invention.quality {
                    InventionQuality::Good => config.good_return,
                    InventionQuality::Bad => Cents::ZERO,
                }
            } else if invention.bonus_offered {
                Cents(100) + config.bonus_amount
            } else {
                Cents(100)
            };
        }
        let bonus_paid = if lone && invention.bonus_offered {
            config.bonus_amount
        } else {
            Cents::ZERO
        };
        inventors[j] = if funded {
            config.inventor_funded_revenue
        } else {
            Cents::ZERO
        } - bonus_paid;
        inventions[j] = InventionOutcome {
            funded,
            investors_in,
            bonus_paid,
        };
    }

    Ok(CrowdfundOutcome {
        inventions,
        investors,
        inventors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv(quality: InventionQuality, bonus: bool) -> InventionState {
        InventionState {
            quality,
            bonus_offered: bonus,
            report: Report::None,
        }
    }

    #[test]
    fn signal_examples() {
        assert_eq!(crowdfund_signal(InventionQuality::Good, 0.01), Report::None);
        assert_eq!(crowdfund_signal(InventionQuality::Bad, 0.10), Report::Negative);
        assert_eq!(crowdfund_signal(InventionQuality::Bad, 0.90), Report::None);
    }

    #[test]
    fn posterior_after_silence_is_one_half() {
        // 0.4286 is a rounded 3/7, so the quotient misses 0.5 by about 2e-5.
        let p = PRIOR_GOOD / (PRIOR_GOOD + (1.0 - PRIOR_GOOD) * 0.75);
        assert!((p - 0.5).abs() < 1e-3, "{p}");
        let exact: f64 = (3.0 / 7.0) / (3.0 / 7.0 + 4.0 / 7.0 * 0.75);
        assert!((exact - 0.5).abs() < 1e-12);
    }

    #[test]
    fn both_invest_good() {
        let cfg = CrowdfundRoundConfig::new(Regime::EB);
        let st = CrowdfundRoundState::new(
            &[inv(InventionQuality::Good, false), inv(InventionQuality::Bad, false)],
            &[vec![true, false], vec![true, false]],
        )
        .unwrap();
        let out = crowdfund_resolve(&cfg, &st).unwrap();
        assert!(out.inventions[0].funded);
        assert_eq!(out.investors[0].per_dollar[0], Cents(300));
        assert_eq!(out.investors[1].per_dollar[0], Cents(300));
        assert_eq!(out.investors[0].per_dollar[1], Cents(150));
        assert_eq!(out.inventors[0], Cents(200));
    }

    #[test]
    fn lone_investor_collects_bonus() {
        let cfg = CrowdfundRoundConfig::new(Regime::EB);
        let st = CrowdfundRoundState::new(
            &[inv(InventionQuality::Bad, true), inv(InventionQuality::Good, false)],
            &[vec![true, true], vec![false, false]],
        )
        .unwrap();
        let out = crowdfund_resolve(&cfg, &st).unwrap();
        assert!(!out.inventions[0].funded);
        assert_eq!(out.investors[0].per_dollar[0], Cents(200));
        assert_eq!(out.inventors[0], Cents(-100));
        // no bonus offered: plain refund
        assert_eq!(out.investors[0].per_dollar[1], Cents(100));
        assert_eq!(out.inventors[1], Cents::ZERO);
    }

    #[test]
    fn both_invest_bad_loses_dollar() {
        let cfg = CrowdfundRoundConfig::new(Regime::RB);
        let st = CrowdfundRoundState::new(
            &[inv(InventionQuality::Bad, true), inv(InventionQuality::Bad, false)],
            &[vec![true, false], vec![true, false]],
        )
        .unwrap();
        let out = crowdfund_resolve(&cfg, &st).unwrap();
        assert!(out.inventions[0].funded);
        assert_eq!(out.investors[0].per_dollar[0], Cents::ZERO);
        assert_eq!(out.inventions[0].bonus_paid, Cents::ZERO);
    }

    #[test]
    fn malformed_matrix_is_rejected() {
        let i = inv(InventionQuality::Good, false);
        assert!(CrowdfundRoundState::new(&[i], &[vec![true, true], vec![true, true]]).is_err());
        assert!(CrowdfundRoundState::new(&[i, i], &[vec![true, true]]).is_err());
        assert!(CrowdfundRoundState::new(&[i, i], &[vec![true], vec![true, true]]).is_err());
        let bad_report = InventionState {
            report: Report::Negative,
            ..i
        };
        assert!(CrowdfundRoundState::new(&[bad_report, i], &[vec![true; 2], vec![true; 2]]).is_err());
    }

    #[test]
    fn every_investor_accounts_for_exactly_two_dollars() {
        let cfg = CrowdfundRoundConfig::new(Regime::EB);
        for mask in 0u8..16 {
            for q in [InventionQuality::Good, InventionQuality::Bad] {
                for bonus in [false, true] {
                    let m = vec![
                        vec![mask & 1 != 0, mask & 2 != 0],
                        vec![mask & 4 != 0, mask & 8 != 0],
                    ];
                    let st = CrowdfundRoundState::new(&[inv(q, bonus), inv(q, !bonus)], &m).unwrap();
                    let out = crowdfund_resolve(&cfg, &st).unwrap();
                    for (i, ledger) in out.investors.iter().enumerate() {
                        assert_eq!(ledger.per_dollar.len(), 2);
                        for j in 0..2 {
                            let invested = m[i][j];
                            let v = ledger.per_dollar[j];
                            if !invested {
                                assert_eq!(v, Cents(150));
                            } else {
                                assert!([Cents(0), Cents(100), Cents(200), Cents(300)].contains(&v));
                            }
                        }
                    }
                    // bonus outflow from inventors equals bonus inflow to lone investors
                    let paid: Cents = out.inventions.iter().map(|o| o.bonus_paid).sum();
                    let received: Cents = out
                        .investors
                        .iter()
                        .flat_map(|l| l.per_dollar)
                        .filter(|&c| c == Cents(200))
                        .map(|_| Cents(100))
                        .sum();
                    assert_eq!(paid, received);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = CrowdfundRoundConfig::new(Regime::RB);
        assert!(cfg.validate().is_ok());
        cfg.neg_report_prob = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = CrowdfundRoundConfig::new(Regime::RB);
        cfg.bonus_amount = Cents(-1);
        assert!(cfg.validate().is_err());
    }
}
