//! Estimation and testing: probit with Wald tests, Wilcoxon rank-sum,
//! demand curves, and the replication verdicts built on them.

pub mod demand;
pub mod normal;
pub mod probit;
pub mod queue;
pub mod report;
pub mod verdict;
pub mod wilcoxon;

use thiserror::Error;

pub use demand::{demand_curve, DemandCurve, DemandRow, LevelRate};
pub use probit::{probit_fit, probit_fit_pruned, wald_test, Design, ProbitFit, WaldTest};
pub use queue::{build_h1_design, build_h2_design, QueueRow, H1_GAMMA1, H2_BETA3};
pub use report::{
    analyze_crowdfund, analyze_queue, compare_reports, AnalysisInput, AnalysisReport, Comparison, CrowdfundAnalysis,
    CrowdfundGroupRow, QueueAnalysis, ReportMeta,
};
pub use verdict::{evaluate_replication, HypothesisVerdict, VerdictThresholds};
pub use wilcoxon::{wilcoxon_rank_sum, WilcoxonResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("rank-deficient design: collinear columns {0}")]
    RankDeficient(String),
    #[error("not estimable: {0}")]
    NotEstimable(String),
}
