//! Analysis bundles, the JSON report, and its table/CSV renderings.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::demand::{demand_curve, DemandCurve, DemandRow};
use super::probit::{probit_fit_pruned, ProbitFit};
use super::queue::{build_h1_design, build_h2_design, QueueRow};
use super::verdict::{evaluate_replication, HypothesisVerdict, VerdictThresholds};
use super::wilcoxon::{wilcoxon_rank_sum, WilcoxonResult};
use super::AnalysisError;
use crate::game::Regime;
use crate::observation::ExperimentId;
use crate::prompt::PromptDesign;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRate {
    pub q50: bool,
    pub wait_time: u8,
    pub purchases: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueAnalysis {
    pub n_estimation: usize,
    pub cells: Vec<CellRate>,
    pub h1_fit: ProbitFit,
    pub h2_fit: ProbitFit,
}

pub fn analyze_queue(rows: &[QueueRow]) -> Result<QueueAnalysis, AnalysisError> {
    let h1 = build_h1_design(rows)?;
    let h2 = build_h2_design(rows)?;
    let mut cells = Vec::new();
    for q50 in [false, true] {
        for w in 1..=4u8 {
            let matching = rows
                .iter()
                .filter(|r| r.valid && !r.informed && r.q50 == q50 && r.wait_time == w);
            let (purchases, count) = matching.fold((0, 0), |(p, c), r| (p + u64::from(r.purchase), c + 1));
            cells.push(CellRate { q50, wait_time: w, purchases, count });
        }
    }
    Ok(QueueAnalysis {
        n_estimation: h1.nrows(),
        cells,
        h1_fit: probit_fit_pruned(&h1)?,
        h2_fit: probit_fit_pruned(&h2)?,
    })
}

/// Funding of good inventions that offered a bonus, for one matching group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrowdfundGroupRow {
    pub group: u32,
    pub regime: Regime,
    pub good_bonus_inventions: u32,
    pub good_bonus_funded: u32,
}

impl CrowdfundGroupRow {
    pub fn rate(&self) -> Option<f64> {
        (self.good_bonus_inventions > 0)
            .then(|| f64::from(self.good_bonus_funded) / f64::from(self.good_bonus_inventions))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdfundAnalysis {
    pub groups: Vec<CrowdfundGroupRow>,
    /// Groups without any good invention offering a bonus have no rate.
    pub excluded_groups: Vec<u32>,
    pub rates_eb: Vec<f64>,
    pub rates_rb: Vec<f64>,
    pub mean_rate_eb: f64,
    pub mean_rate_rb: f64,
    pub wilcoxon: WilcoxonResult,
}

pub fn analyze_crowdfund(groups: &[CrowdfundGroupRow]) -> Result<CrowdfundAnalysis, AnalysisError> {
    let mut rates_eb = Vec::new();
    let mut rates_rb = Vec::new();
    let mut excluded_groups = Vec::new();
    for g in groups {
        match (g.rate(), g.regime) {
            (Some(r), Regime::EB) => rates_eb.push(r),
            (Some(r), Regime::RB) => rates_rb.push(r),
            (None, _) => excluded_groups.push(g.group),
        }
    }
    let wilcoxon = wilcoxon_rank_sum(&rates_eb, &rates_rb)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(CrowdfundAnalysis {
        groups: groups.to_vec(),
        excluded_groups,
        mean_rate_eb: mean(&rates_eb),
        mean_rate_rb: mean(&rates_rb),
        rates_eb,
        rates_rb,
        wilcoxon,
    })
}

/// Rows feeding an analysis, one variant per experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum AnalysisInput {
    Queue(Vec<QueueRow>),
    Crowdfund(Vec<CrowdfundGroupRow>),
    Demand(Vec<DemandRow>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub run_id: String,
    pub experiment: ExperimentId,
    pub design: PromptDesign,
    pub backend: String,
    pub n_records: usize,
    pub n_invalid: usize,
    pub incomplete_units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    #[serde(flatten)]
    pub meta: ReportMeta,
    pub thresholds: VerdictThresholds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue: Option<QueueAnalysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crowdfund: Option<CrowdfundAnalysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<DemandCurve>,
    pub verdicts: Vec<HypothesisVerdict>,
}

impl AnalysisReport {
    pub fn build(meta: ReportMeta, input: &AnalysisInput, thresholds: VerdictThresholds) -> Result<Self, AnalysisError> {
        let expected = match input {
            AnalysisInput::Queue(_) => ExperimentId::Queue,
            AnalysisInput::Crowdfund(_) => ExperimentId::Crowdfund,
            AnalysisInput::Demand(_) => ExperimentId::Demand,
        };
        if expected != meta.experiment {
            return Err(AnalysisError::Input(format!(
                "{} data supplied for a {} report",
                expected, meta.experiment
            )));
        }
        let mut report = Self {
            schema_version: REPORT_SCHEMA_VERSION,
            meta,
            thresholds,
            queue: None,
            crowdfund: None,
            demand: None,
            verdicts: Vec::new(),
        };
        match input {
            AnalysisInput::Queue(rows) => report.queue = Some(analyze_queue(rows)?),
            AnalysisInput::Crowdfund(groups) => report.crowdfund = Some(analyze_crowdfund(groups)?),
            AnalysisInput::Demand(rows) => report.demand = Some(demand_curve(rows)?),
        }
        report.verdicts = evaluate_replication(&report, &thresholds)?;
        Ok(report)
    }

    /// Human-readable summary: one line per hypothesis plus fit details.
    pub fn to_table(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "run {}  experiment {}  design {}  backend {}",
            m.run_id,
            m.experiment,
            m.design.long_name(),
            m.backend
        );
        let _ = writeln!(
            out,
            "records {}  invalid {}  incomplete units {}",
            m.n_records, m.n_invalid, m.incomplete_units
        );
        out.push('\n');
        out.push_str(&verdict_table(&self.verdicts));
        if let Some(q) = &self.queue {
            out.push('\n');
            let _ = writeln!(out, "purchase rates (uninformed, valid):");
            let _ = writeln!(out, "{:<6}{:>8}{:>8}{:>8}{:>8}", "", "w=1", "w=2", "w=3", "w=4");
            for q50 in [false, true] {
                let _ = write!(out, "{:<6}", if q50 { "Q50" } else { "Q00" });
                for c in q.cells.iter().filter(|c| c.q50 == q50) {
                    if c.count == 0 {
                        let _ = write!(out, "{:>8}", "—");
                    } else {
                        let _ = write!(out, "{:>8.3}", c.purchases as f64 / c.count as f64);
                    }
                }
                out.push('\n');
            }
            for (label, fit) in [("H1 probit", &q.h1_fit), ("H2 probit", &q.h2_fit)] {
                out.push('\n');
                out.push_str(&fit_table(label, fit));
            }
        }
        if let Some(c) = &self.crowdfund {
            out.push('\n');
            let _ = writeln!(
                out,
                "good+bonus funding rate: EB {:.3} ({} groups)  RB {:.3} ({} groups)  excluded {}",
                c.mean_rate_eb,
                c.rates_eb.len(),
                c.mean_rate_rb,
                c.rates_rb.len(),
                c.excluded_groups.len()
            );
            let w = &c.wilcoxon;
            let _ = writeln!(
                out,
                "rank sum W = {:.1}  z = {:.3}  p (two-sided) = {:.4}  p (one-sided) = {:.4}",
                w.rank_sum, w.z, w.p_two_sided, w.p_one_sided
            );
        }
        if let Some(d) = &self.demand {
            out.push('\n');
            let _ = writeln!(out, "{:>8}{:>10}{:>8}", "price", "rate", "n");
            for l in &d.levels {
                let _ = writeln!(out, "{:>7.0}%{:>10.3}{:>8}", l.relative_price * 100.0, l.rate, l.count);
            }
            let rho = d.spearman_rho.map_or("—".to_string(), |r| format!("{r:.3}"));
            let _ = writeln!(
                out,
                "spearman rho {rho}  max adjacent increase {:.3}",
                d.max_adjacent_increase
            );
        }
        out
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("—".to_string(), |x| format!("{x:.digits$}"))
}

fn fmt_p(p: Option<f64>) -> String {
    match p {
        None => "—".into(),
        Some(p) if p < 0.01 => "<0.01".into(),
        Some(p) => format!("{p:.2}"),
    }
}

pub fn verdict_table(verdicts: &[HypothesisVerdict]) -> String {
    let mut out = format!(
        "{:<8}{:>10}{:>22}{:>8}{:>10}\n",
        "hyp", "estimate", "statistic", "p", "success"
    );
    for v in verdicts {
        let stat = match v.statistic {
            Some(s) => format!("{}={s:.2}", v.statistic_name),
            None => "—".into(),
        };
        let _ = writeln!(
            out,
            "{:<8}{:>10}{:>22}{:>8}{:>10}",
            v.id,
            fmt_opt(v.estimate, 2),
            stat,
            fmt_p(v.p),
            if v.success { "✓" } else { "✗" }
        );
        if let Some(note) = &v.note {
            let _ = writeln!(out, "        note: {note}");
        }
    }
    out
}

fn fit_table(label: &str, fit: &ProbitFit) -> String {
    let mut out = format!(
        "{label}: n = {}  logL = {:.3}  iterations {}  converged {}  separation {}\n",
        fit.n_obs, fit.log_likelihood, fit.iterations, fit.converged, fit.separation_detected
    );
    for (j, name) in fit.columns.iter().enumerate() {
        let _ = writeln!(
            out,
            "  {:<10}{:>10}{:>10}",
            name,
            fmt_opt(fit.coefficients[j], 3),
            fmt_opt(fit.standard_errors[j], 3)
        );
    }
    out
}

/// Cross-report matrix: one row per (design, backend) report, one column
/// per hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub experiment: ExperimentId,
    pub hypotheses: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run_id: String,
    pub design: PromptDesign,
    pub backend: String,
    /// `None` when the hypothesis is absent from this report.
    pub success: Vec<Option<bool>>,
}

pub fn compare_reports(reports: &[AnalysisReport]) -> Result<Comparison, AnalysisError> {
    let first = reports
        .first()
        .ok_or_else(|| AnalysisError::Input("no reports to compare".into()))?;
    let experiment = first.meta.experiment;
    if let Some(other) = reports.iter().find(|r| r.meta.experiment != experiment) {
        return Err(AnalysisError::Input(format!(
            "cannot compare {} report `{}` with {} report `{}`",
            other.meta.experiment, other.meta.run_id, experiment, first.meta.run_id
        )));
    }
    let mut hypotheses: Vec<String> = Vec::new();
    for r in reports {
        for v in &r.verdicts {
            if !hypotheses.contains(&v.id) {
                hypotheses.push(v.id.clone());
            }
        }
    }
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            run_id: r.meta.run_id.clone(),
            design: r.meta.design,
            backend: r.meta.backend.clone(),
            success: hypotheses
                .iter()
                .map(|h| r.verdicts.iter().find(|v| &v.id == h).map(|v| v.success))
                .collect(),
        })
        .collect();
    Ok(Comparison { experiment, hypotheses, rows })
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\r', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn mark(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "✓",
        Some(false) => "✗",
        None => "—",
    }
}

impl Comparison {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:<30}{:<22}{:<24}", "run", "design", "backend");
        for h in &self.hypotheses {
            let _ = write!(out, "{h:>8}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<30}{:<22}{:<24}", r.run_id, r.design.long_name(), r.backend);
            for s in &r.success {
                let _ = write!(out, "{:>8}", mark(*s));
            }
            out.push('\n');
        }
        out
    }

    /// RFC 4180 CSV (CRLF line endings, quoted fields where needed).
    pub fn to_csv(&self) -> String {
        let mut header = vec!["run_id".to_string(), "design".into(), "backend".into()];
        header.extend(self.hypotheses.iter().cloned());
        let mut out = header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(",");
        out.push_str("\r\n");
        for r in &self.rows {
            let mut fields = vec![
                csv_field(&r.run_id),
                csv_field(r.design.short_name()),
                csv_field(&r.backend),
            ];
            fields.extend(r.success.iter().map(|s| match s {
                Some(true) => "1".to_string(),
                Some(false) => "0".to_string(),
                None => String::new(),
            }));
            out.push_str(&fields.join(","));
            out.push_str("\r\n");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(experiment: ExperimentId, design: PromptDesign) -> ReportMeta {
        ReportMeta {
            run_id: format!("{experiment}-{}", design.short_name()),
            experiment,
            design,
            backend: "test".into(),
            n_records: 0,
            n_invalid: 0,
            incomplete_units: 0,
        }
    }

    fn queue_rows_iff_w1() -> Vec<QueueRow> {
        let mut rows = Vec::new();
        for q50 in [false, true] {
            for w in 1..=4u8 {
                for _ in 0..10 {
                    rows.push(QueueRow { purchase: w == 1, wait_time: w, q50, informed: false, valid: true });
                }
            }
        }
        rows
    }

    #[test]
    fn uniform_behaviour_is_non_estimable() {
        let r = AnalysisReport::build(
            meta(ExperimentId::Queue, PromptDesign::Baseline),
            &AnalysisInput::Queue(queue_rows_iff_w1()),
            VerdictThresholds::default(),
        );
        let r = r.unwrap_or_else(|e| panic!("{e}"));
        let q = r.queue.as_ref().unwrap();
        assert!(q.h2_fit.separation_detected);
        for v in &r.verdicts {
            assert!(!v.estimable && !v.success, "{v:?}");
        }
        let table = r.to_table();
        assert!(table.contains("—"));
        let json = serde_json::to_string(&r).unwrap();
        let back: AnalysisReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.verdicts, r.verdicts);
    }

    #[test]
    fn comparison_rejects_mixed_experiments_and_quotes_csv() {
        let demand_rows: Vec<DemandRow> = (0..11u8)
            .flat_map(|k| (0..10).map(move |i| DemandRow { level_index: k, purchase: i < 10 - k as i32 }))
            .collect();
        let d = AnalysisReport::build(
            meta(ExperimentId::Demand, PromptDesign::ContextFormationNavigation),
            &AnalysisInput::Demand(demand_rows),
            VerdictThresholds::default(),
        )
        .unwrap();
        let mut q = AnalysisReport::build(
            meta(ExperimentId::Queue, PromptDesign::ContextFormation),
            &AnalysisInput::Queue(queue_rows_iff_w1()),
            VerdictThresholds::default(),
        )
        .unwrap();
        assert!(compare_reports(&[d.clone(), q.clone()]).is_err());
        q.meta.backend = "model, \"large\"".into();
        let c = compare_reports(&[q]).unwrap();
        let csv = c.to_csv();
        assert!(csv.contains("\"model, \"\"large\"\"\""), "{csv}");
        assert!(csv.ends_with("\r\n"));
        assert_eq!(compare_reports(&[d]).unwrap().rows[0].success, vec![Some(true)]);
    }
}
