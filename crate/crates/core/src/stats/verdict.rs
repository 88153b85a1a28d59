//! Replication verdicts: sign and significance checks per hypothesis.

use serde::{Deserialize, Serialize};

use super::queue::{H1_GAMMA1, H2_BETA3};
use super::report::{CrowdfundAnalysis, QueueAnalysis};
use super::{AnalysisError, DemandCurve};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictThresholds {
    pub alpha: f64,
    /// Demand curve must have a rank correlation at or below this.
    pub demand_rho_max: f64,
    /// Demand curve may rise between adjacent levels by at most this.
    pub demand_max_increase: f64,
}

impl Default for VerdictThresholds {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            demand_rho_max: -0.9,
            demand_max_increase: 0.02,
        }
    }
}

impl VerdictThresholds {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AnalysisError::Input(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        if !(-1.0..=1.0).contains(&self.demand_rho_max) {
            return Err(AnalysisError::Input(format!(
                "demand_rho_max must be in [-1, 1], got {}",
                self.demand_rho_max
            )));
        }
        if !(self.demand_max_increase >= 0.0) {
            return Err(AnalysisError::Input(format!(
                "demand_max_increase must be non-negative, got {}",
                self.demand_max_increase
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisVerdict {
    pub id: String,
    pub description: String,
    pub estimate: Option<f64>,
    /// Name of the statistic: `chi2`, `z` or `max_increase`.
    pub statistic_name: String,
    pub statistic: Option<f64>,
    pub p: Option<f64>,
    pub direction_ok: bool,
    pub significant: bool,
    pub estimable: bool,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl HypothesisVerdict {
    fn new(id: &str, description: &str, statistic_name: &str) -> Self {
        Self {
            id: id.into(),
            description: description.into(),
            estimate: None,
            statistic_name: statistic_name.into(),
            statistic: None,
            p: None,
            direction_ok: false,
            significant: false,
            estimable: false,
            success: false,
            note: None,
        }
    }

    fn finish(mut self) -> Self {
        self.success = self.estimable && self.direction_ok && self.significant;
        self
    }
}

fn probit_verdict(
    id: &str,
    description: &str,
    analysis: &QueueAnalysis,
    h1: bool,
    alpha: f64,
) -> HypothesisVerdict {
    let (fit, index, want_negative) = if h1 {
        (&analysis.h1_fit, H1_GAMMA1, true)
    } else {
        (&analysis.h2_fit, H2_BETA3, false)
    };
    let mut v = HypothesisVerdict::new(id, description, "chi2");
    match super::wald_test(fit, index) {
        Ok(w) => {
            v.estimable = true;
            v.estimate = Some(w.estimate);
            v.statistic = Some(w.chi2);
            v.p = Some(w.p);
            v.direction_ok = if want_negative { w.estimate < 0.0 } else { w.estimate > 0.0 };
            v.significant = w.p <= alpha;
        }
        Err(e) => {
            v.note = Some(if fit.separation_detected {
                format!("separation: wait time perfectly predicts some decisions ({e})")
            } else {
                e.to_string()
            });
        }
    }
    v.finish()
}

pub fn queue_verdicts(analysis: &QueueAnalysis, t: &VerdictThresholds) -> Vec<HypothesisVerdict> {
    vec![
        probit_verdict(
            "H1",
            "Q50 lowers purchases at the shortest wait time (gamma_1 < 0)",
            analysis,
            true,
            t.alpha,
        ),
        probit_verdict(
            "H2",
            "Q50 makes purchases rise with wait time relative to Q00 (beta_3 > 0)",
            analysis,
            false,
            t.alpha,
        ),
    ]
}

pub fn crowdfund_verdicts(analysis: &CrowdfundAnalysis, t: &VerdictThresholds) -> Vec<HypothesisVerdict> {
    let mut v = HypothesisVerdict::new(
        "CF",
        "good inventions offering a bonus are funded more often under EB than RB",
        "z",
    );
    let w = &analysis.wilcoxon;
    v.estimate = Some(analysis.mean_rate_eb - analysis.mean_rate_rb);
    if w.degenerate {
        v.note = Some("all group rates tied; rank-sum statistic undefined".into());
    } else {
        v.estimable = true;
        v.statistic = Some(w.z);
        v.p = Some(w.p_two_sided);
        v.direction_ok = w.z > 0.0;
        v.significant = w.p_two_sided <= t.alpha;
    }
    vec![v.finish()]
}

pub fn demand_verdicts(curve: &DemandCurve, t: &VerdictThresholds) -> Vec<HypothesisVerdict> {
    let mut v = HypothesisVerdict::new(
        "DEMAND",
        "purchase rates fall monotonically with relative price",
        "max_increase",
    );
    v.statistic = Some(curve.max_adjacent_increase);
    v.significant = curve.max_adjacent_increase <= t.demand_max_increase;
    match curve.spearman_rho {
        Some(rho) => {
            v.estimable = true;
            v.estimate = Some(rho);
            v.direction_ok = rho <= t.demand_rho_max;
        }
        None => v.note = Some("purchase rate identical at every level; rank correlation undefined".into()),
    }
    vec![v.finish()]
}

/// Verdicts for whichever experiment the report holds.
pub fn evaluate_replication(
    report: &super::AnalysisReport,
    thresholds: &VerdictThresholds,
) -> Result<Vec<HypothesisVerdict>, AnalysisError> {
    thresholds.validate()?;
    if let Some(q) = &report.queue {
        Ok(queue_verdicts(q, thresholds))
    } else if let Some(c) = &report.crowdfund {
        Ok(crowdfund_verdicts(c, thresholds))
    } else if let Some(d) = &report.demand {
        Ok(demand_verdicts(d, thresholds))
    } else {
        Err(AnalysisError::Input("report holds no analysis to evaluate".into()))
    }
}
