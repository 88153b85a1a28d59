//! Regression designs for the queue hypotheses.

use serde::{Deserialize, Serialize};

use super::probit::Design;
use super::AnalysisError;

/// One queue decision as it enters the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueRow {
    pub purchase: bool,
    pub wait_time: u8,
    pub q50: bool,
    pub informed: bool,
    pub valid: bool,
}

pub const H1_COLUMNS: [&str; 8] = ["const", "D2", "D3", "D4", "D1xQ50", "D2xQ50", "D3xQ50", "D4xQ50"];
pub const H2_COLUMNS: [&str; 4] = ["const", "w", "Q50", "wxQ50"];
/// Index of γ₁ (the Q50 shift at w = 1) in the H1 design.
pub const H1_GAMMA1: usize = 4;
/// Index of β₃ (the Q50 × w interaction) in the H2 design.
pub const H2_BETA3: usize = 3;

fn estimation_sample(rows: &[QueueRow]) -> Result<Vec<QueueRow>, AnalysisError> {
    let sample: Vec<QueueRow> = rows.iter().filter(|r| r.valid && !r.informed).copied().collect();
    if sample.is_empty() {
        return Err(AnalysisError::Input("no valid uninformed queue decisions to analyse".into()));
    }
    if let Some(r) = sample.iter().find(|r| !(1..=4).contains(&r.wait_time)) {
        return Err(AnalysisError::Input(format!("wait time {} outside 1..4", r.wait_time)));
    }
    Ok(sample)
}

fn outcomes(sample: &[QueueRow]) -> Vec<f64> {
    sample.iter().map(|r| if r.purchase { 1.0 } else { 0.0 }).collect()
}

/// Wait-time dummies with w = 1 as the omitted baseline, plus all four
/// wait-time dummies interacted with the Q50 indicator.
pub fn h1_covariates(wait_time: u8, q50: bool) -> Vec<f64> {
    let d = |w: u8| if wait_time == w { 1.0 } else { 0.0 };
    let q = if q50 { 1.0 } else { 0.0 };
    vec![1.0, d(2), d(3), d(4), d(1) * q, d(2) * q, d(3) * q, d(4) * q]
}

pub fn h2_covariates(wait_time: u8, q50: bool) -> Vec<f64> {
    let w = f64::from(wait_time);
    let q = if q50 { 1.0 } else { 0.0 };
    vec![1.0, w, q, w * q]
}

/// Uses uninformed, valid decisions only.
pub fn build_h1_design(rows: &[QueueRow]) -> Result<Design, AnalysisError> {
    let sample = estimation_sample(rows)?;
    let x: Vec<Vec<f64>> = sample.iter().map(|r| h1_covariates(r.wait_time, r.q50)).collect();
    Design::new(H1_COLUMNS.iter().map(|s| s.to_string()).collect(), &x, outcomes(&sample))
}

pub fn build_h2_design(rows: &[QueueRow]) -> Result<Design, AnalysisError> {
    let sample = estimation_sample(rows)?;
    let x: Vec<Vec<f64>> = sample.iter().map(|r| h2_covariates(r.wait_time, r.q50)).collect();
    Design::new(H2_COLUMNS.iter().map(|s| s.to_string()).collect(), &x, outcomes(&sample))
}
