//! Run planning, execution and persistence.
//!
//! A run is split into independent units (queue cohorts, crowdfund matching
//! groups, demand cells). Each unit owns a generator seeded from the master
//! seed and its index, so units can execute in any order on any number of
//! workers and still produce the same records.

mod execute;
pub mod transcript;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentFactory, BackendIdentity, BackendSpec, OracleParams};
use crate::game::{
    default_catalog, demand_grid, load_catalog, DemandCell, GameError, QueueCondition, Regime, COHORT_SIZE,
    INVENTIONS_PER_GAME, INVESTORS_PER_GAME, PRICE_LEVELS,
};
use crate::money::Cents;
use crate::observation::ExperimentId;
use crate::prompt::{PromptDesign, PromptError, PromptTemplateSet};
use crate::stats::{AnalysisReport, ReportMeta, VerdictThresholds};

pub use execute::{execute_crowdfund_group, execute_demand_cell, execute_queue_cohort, CohortAssignment, UnitContext};
pub use transcript::{
    analysis_input, crowdfund_groups, load_transcripts, write_transcripts, RecordContext, TranscriptRecord,
    TRANSCRIPT_SCHEMA_VERSION,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRANSCRIPT_FILE: &str = "transcripts.jsonl";

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{path}:{line}: {message}")]
    Load { path: String, line: usize, message: String },
    #[error("output directory {0} already exists (use --force to overwrite)")]
    Exists(PathBuf),
    #[error("analysis input error: {0}")]
    Analysis(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Game(#[from] GameError),
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable seed for child `index` of `parent`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InformedMode {
    /// Each Q50 subject is informed independently with probability 0.5.
    #[default]
    Bernoulli,
    /// Exactly two of the four Q50 positions are informed.
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueuePlan {
    pub cohorts_q00: u32,
    pub cohorts_q50: u32,
}

impl Default for QueuePlan {
    fn default() -> Self {
        Self {
            cohorts_q00: 208,
            cohorts_q50: 442,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrowdfundPlan {
    pub groups_per_condition: u32,
    pub group_size: u32,
    pub rounds: u32,
}

impl Default for CrowdfundPlan {
    fn default() -> Self {
        Self {
            groups_per_condition: 40,
            group_size: 12,
            rounds: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandPlan {
    /// Leading catalog products used.
    pub products: u32,
    /// Leading price levels used, starting at relative price 0.
    pub levels: u32,
    pub decisions_per_cell: u32,
}

impl Default for DemandPlan {
    fn default() -> Self {
        Self {
            products: 40,
            levels: 11,
            decisions_per_cell: 50,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplePlan {
    pub queue: QueuePlan,
    pub crowdfund: CrowdfundPlan,
    pub demand: DemandPlan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentId,
    pub design: PromptDesign,
    pub backend: BackendSpec,
    #[serde(default)]
    pub sample_plan: SamplePlan,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub informed_assignment: InformedMode,
    #[serde(default)]
    pub oracle: OracleParams,
    /// Inventor revenue when an invention is funded.
    #[serde(default = "default_inventor_revenue")]
    pub inventor_revenue: Cents,
    /// Product catalog for the demand survey; the bundled one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
}

fn default_inventor_revenue() -> Cents {
    Cents(200)
}

impl RunConfig {
    pub fn new(experiment: ExperimentId, design: PromptDesign, backend: BackendSpec, master_seed: u64) -> Self {
        Self {
            experiment,
            design,
            backend,
            sample_plan: SamplePlan::default(),
            master_seed,
            informed_assignment: InformedMode::default(),
            oracle: OracleParams::default(),
            inventor_revenue: default_inventor_revenue(),
            catalog: None,
        }
    }

    /// `{experiment}-{design}-{backend}-seed{seed}`
    pub fn run_id(&self) -> String {
        format!(
            "{}-{}-{}-seed{}",
            self.experiment,
            self.design.short_name(),
            self.backend.name(),
            self.master_seed
        )
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let positive = |name: &str, v: u32| {
            if v == 0 {
                Err(OrchestratorError::Config(format!("sample_plan.{name} must be positive")))
            } else {
                Ok(())
            }
        };
        let plan = &self.sample_plan;
        match self.experiment {
            ExperimentId::Queue => {
                positive("queue.cohorts_q00", plan.queue.cohorts_q00)?;
                positive("queue.cohorts_q50", plan.queue.cohorts_q50)?;
            }
            ExperimentId::Crowdfund => {
                let c = &plan.crowdfund;
                positive("crowdfund.groups_per_condition", c.groups_per_condition)?;
                positive("crowdfund.group_size", c.group_size)?;
                positive("crowdfund.rounds", c.rounds)?;
                if c.group_size % GAME_SIZE as u32 != 0 {
                    return Err(OrchestratorError::Config(format!(
                        "sample_plan.crowdfund.group_size must be a multiple of {GAME_SIZE}, got {}",
                        c.group_size
                    )));
                }
                if c.group_size > 252 || c.rounds > 255 {
                    return Err(OrchestratorError::Config(
                        "sample_plan.crowdfund.group_size and rounds must fit in 8 bits".into(),
                    ));
                }
                if self.inventor_revenue < Cents::ZERO {
                    return Err(OrchestratorError::Config("inventor_revenue must be non-negative".into()));
                }
            }
            ExperimentId::Demand => {
                let d = &plan.demand;
                positive("demand.products", d.products)?;
                positive("demand.levels", d.levels)?;
                positive("demand.decisions_per_cell", d.decisions_per_cell)?;
                if d.levels as usize > PRICE_LEVELS {
                    return Err(OrchestratorError::Config(format!(
                        "sample_plan.demand.levels must be at most {PRICE_LEVELS}, got {}",
                        d.levels
                    )));
                }
            }
        }
        if !self.backend.supports(self.experiment) {
            return Err(OrchestratorError::Config(format!(
                "backend {} cannot play the {} experiment",
                self.backend.name(),
                self.experiment
            )));
        }
        self.backend.validate()?;
        self.oracle.validate()?;
        Ok(())
    }

    fn demand_cells(&self) -> Result<Vec<DemandCell>, OrchestratorError> {
        let catalog = match &self.catalog {
            Some(path) => load_catalog(path)?,
            None => default_catalog(),
        };
        let plan = &self.sample_plan.demand;
        if plan.products as usize > catalog.len() {
            return Err(OrchestratorError::Config(format!(
                "sample_plan.demand.products is {} but the catalog lists {}",
                plan.products,
                catalog.len()
            )));
        }
        let kept: Vec<u32> = catalog.iter().take(plan.products as usize).map(|p| p.id).collect();
        Ok(demand_grid(&catalog)?
            .into_iter()
            .filter(|c| kept.contains(&c.product_id) && u32::from(c.level_index) < plan.levels)
            .collect())
    }
}

/// Players in one crowdfunding game.
pub const GAME_SIZE: usize = INVENTIONS_PER_GAME + INVESTORS_PER_GAME;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnitKind {
    QueueCohort { condition: QueueCondition },
    CrowdfundGroup { regime: Regime },
    DemandCell { cell: DemandCell },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitPlan {
    pub index: u32,
    pub label: String,
    pub seed: u64,
    pub kind: UnitKind,
}

impl UnitPlan {
    /// Decision events the unit produces when it completes.
    pub fn expected_records(&self, plan: &SamplePlan) -> u64 {
        match self.kind {
            UnitKind::QueueCohort { .. } => COHORT_SIZE as u64,
            UnitKind::CrowdfundGroup { regime } => {
                let c = &plan.crowdfund;
                let games = u64::from(c.group_size) / GAME_SIZE as u64;
                let inventor = if regime == Regime::EB { INVENTIONS_PER_GAME as u64 } else { 0 };
                let investor = (INVESTORS_PER_GAME * INVENTIONS_PER_GAME) as u64;
                u64::from(c.rounds) * games * (inventor + investor)
            }
            UnitKind::DemandCell { .. } => u64::from(plan.demand.decisions_per_cell),
        }
    }
}

pub fn plan_run(config: &RunConfig) -> Result<Vec<UnitPlan>, OrchestratorError> {
    config.validate()?;
    let mut units = Vec::new();
    let mut push = |label: String, kind: UnitKind| {
        let index = units.len() as u32;
        units.push(UnitPlan {
            index,
            label,
            seed: derive_seed(config.master_seed, u64::from(index)),
            kind,
        });
    };
    let plan = &config.sample_plan;
    match config.experiment {
        ExperimentId::Queue => {
            for (condition, n) in [
                (QueueCondition::Q00, plan.queue.cohorts_q00),
                (QueueCondition::Q50, plan.queue.cohorts_q50),
            ] {
                for c in 0..n {
                    push(format!("{condition}-{c:04}"), UnitKind::QueueCohort { condition });
                }
            }
        }
        ExperimentId::Crowdfund => {
            for regime in [Regime::EB, Regime::RB] {
                for g in 0..plan.crowdfund.groups_per_condition {
                    push(format!("{regime}-g{g:02}"), UnitKind::CrowdfundGroup { regime });
                }
            }
        }
        ExperimentId::Demand => {
            for cell in config.demand_cells()? {
                push(
                    format!("p{:02}-l{:02}", cell.product_id, cell.level_index),
                    UnitKind::DemandCell { cell },
                );
            }
        }
    }
    Ok(units)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSeed {
    pub index: u32,
    pub label: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncompleteUnit {
    pub index: u32,
    pub label: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub config: RunConfig,
    pub identity: BackendIdentity,
    pub started_at: String,
    pub finished_at: String,
    pub units_planned: u32,
    pub units_completed: u32,
    pub records_expected: u64,
    pub records_written: u64,
    pub invalid_decisions: u64,
    /// Decisions that needed the format reminder.
    pub reprompted_decisions: u64,
    pub incomplete_units: Vec<IncompleteUnit>,
    pub unit_seeds: Vec<UnitSeed>,
}

impl RunManifest {
    pub fn is_complete(&self) -> bool {
        self.incomplete_units.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, OrchestratorError> {
        let text = std::fs::read_to_string(path).map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Records in plan order.
    pub records: Vec<TranscriptRecord>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Executes every unit of the plan on a pool of `workers` threads.
pub fn execute_run(
    config: &RunConfig,
    factory: Arc<dyn AgentFactory>,
    workers: usize,
) -> Result<RunOutcome, OrchestratorError> {
    let units = plan_run(config)?;
    let templates = PromptTemplateSet::bundled(config.experiment);
    let run_id = config.run_id();
    let started_at = now();
    let ctx = UnitContext {
        run_id: &run_id,
        config,
        templates: &templates,
        factory: factory.as_ref(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| OrchestratorError::Io(format!("starting worker pool: {e}")))?;
    let results: Vec<Result<Vec<TranscriptRecord>, OrchestratorError>> =
        pool.install(|| units.par_iter().map(|u| execute::execute_unit(&ctx, u)).collect());

    let mut records = Vec::new();
    let mut incomplete_units = Vec::new();
    let mut records_expected = 0;
    for (unit, result) in units.iter().zip(results) {
        records_expected += unit.expected_records(&config.sample_plan);
        match result {
            Ok(r) => records.extend(r),
            // Prompt and usage errors are bugs or bad configuration, not
            // transient failures; they abort the run.
            Err(e @ OrchestratorError::Agent(AgentError::Transport { .. })) => incomplete_units.push(IncompleteUnit {
                index: unit.index,
                label: unit.label.clone(),
                error: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        run_id: run_id.clone(),
        config: config.clone(),
        identity: factory.identity(),
        started_at,
        finished_at: now(),
        units_planned: units.len() as u32,
        units_completed: (units.len() - incomplete_units.len()) as u32,
        records_expected,
        records_written: records.len() as u64,
        invalid_decisions: records.iter().filter(|r| !r.valid).count() as u64,
        reprompted_decisions: records.iter().filter(|r| r.first_response.is_some()).count() as u64,
        incomplete_units,
        unit_seeds: units
            .iter()
            .map(|u| UnitSeed {
                index: u.index,
                label: u.label.clone(),
                seed: u.seed,
            })
            .collect(),
    };
    Ok(RunOutcome { manifest, records })
}

/// Prepares `dir` for writing: refuses an existing directory unless `force`
/// is set, in which case its contents are removed.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<(), OrchestratorError> {
    if dir.exists() {
        if !force {
            return Err(OrchestratorError::Exists(dir.to_path_buf()));
        }
        std::fs::remove_dir_all(dir).map_err(|e| OrchestratorError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| OrchestratorError::Io(format!("{}: {e}", dir.display())))
}

/// Writes `runs/<run_id>/{manifest.json, transcripts.jsonl}` under `out_root`.
pub fn persist_run(out_root: &Path, outcome: &RunOutcome, force: bool) -> Result<PathBuf, OrchestratorError> {
    let dir = out_root.join(&outcome.manifest.run_id);
    prepare_output_dir(&dir, force)?;
    write_transcripts(&dir.join(TRANSCRIPT_FILE), &outcome.records)?;
    let manifest = serde_json::to_string_pretty(&outcome.manifest).map_err(|e| OrchestratorError::Io(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest + "\n").map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
    Ok(dir)
}

/// Builds the backend and executes the run.
pub fn run(config: &RunConfig, workers: usize) -> Result<RunOutcome, OrchestratorError> {
    config.validate()?;
    let factory = config.backend.build(config.experiment, &config.oracle)?;
    execute_run(config, factory, workers)
}

pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";

/// Analyzes the transcripts of a run directory. The manifest, when present,
/// supplies the backend label and the count of incomplete units.
pub fn analyze_run_dir(dir: &Path, thresholds: VerdictThresholds) -> Result<AnalysisReport, OrchestratorError> {
    let transcripts = dir.join(TRANSCRIPT_FILE);
    if !transcripts.is_file() {
        return Err(OrchestratorError::Io(format!("{} not found", transcripts.display())));
    }
    let records = load_transcripts(&transcripts)?;
    let first = records
        .first()
        .ok_or_else(|| OrchestratorError::Analysis(format!("{} has no records", transcripts.display())))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.is_file() {
        Some(RunManifest::load(&manifest_path)?)
    } else {
        None
    };
    let meta = ReportMeta {
        run_id: first.run_id.clone(),
        experiment: first.experiment,
        design: first.design,
        backend: manifest
            .as_ref()
            .map(|m| m.identity.label())
            .unwrap_or_else(|| "unknown".into()),
        n_records: records.len(),
        n_invalid: records.iter().filter(|r| !r.valid).count(),
        incomplete_units: manifest.as_ref().map_or(0, |m| m.incomplete_units.len()),
    };
    let input = analysis_input(&records)?;
    AnalysisReport::build(meta, &input, thresholds).map_err(|e| OrchestratorError::Analysis(e.to_string()))
}
