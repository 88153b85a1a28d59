//! Transcript records, JSONL persistence, and conversion to analysis rows.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::agents::TokenUsage;
use crate::game::{InventionQuality, ProductValue, QueueCondition, QueueRole, Regime};
use crate::money::Cents;
use crate::observation::{Decision, ExperimentId, Observation};
use crate::prompt::{Message, PromptDesign};
use crate::stats::report::AnalysisInput;
use crate::stats::{CrowdfundGroupRow, DemandRow, QueueRow};

pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;

/// Facts about the decision's environment that the subject may not see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordContext {
    Queue {
        product_value: ProductValue,
    },
    Inventor {
        game: u8,
        invention: u8,
        funded: bool,
    },
    Investor {
        game: u8,
        invention: u8,
        quality: InventionQuality,
        bonus_offered: bool,
        funded: bool,
    },
    Demand {
        product_id: u32,
        level_index: u8,
        replicate: u32,
    },
}

/// One decision event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub experiment: ExperimentId,
    pub design: PromptDesign,
    pub unit_index: u32,
    /// Cohort, matching group or cell label, e.g. `Q50-0017`.
    pub unit_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<u8>,
    pub condition: String,
    pub role: String,
    pub observation: Observation,
    pub context: RecordContext,
    pub messages: Vec<Message>,
    pub raw_response: String,
    /// Response that failed to parse before the format reminder, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_response: Option<String>,
    pub decision: Option<Decision>,
    pub reason: String,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<Cents>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    pub retries: u32,
}

impl TranscriptRecord {
    /// Decision used to advance the game: the parsed one, or the negative
    /// action of the vocabulary when the response was invalid.
    pub fn effective_decision(&self) -> Decision {
        self.decision.unwrap_or_else(|| self.observation.vocabulary().negative())
    }
}

pub fn condition_label(condition: QueueCondition) -> String {
    condition.to_string()
}

pub fn queue_role_label(role: QueueRole) -> String {
    match role {
        QueueRole::Uninformed => "uninformed".into(),
        QueueRole::Informed(ProductValue::High) => "informed_high".into(),
        QueueRole::Informed(ProductValue::Low) => "informed_low".into(),
    }
}

pub fn regime_label(regime: Regime) -> String {
    regime.to_string()
}

pub fn write_transcripts(path: &Path, records: &[TranscriptRecord]) -> Result<(), OrchestratorError> {
    let file = std::fs::File::create(path).map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| OrchestratorError::Io(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
    }
    out.flush().map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))
}

/// Reads a JSONL transcript file, checking the schema version and that all
/// records belong to one run of one experiment.
pub fn load_transcripts(path: &Path) -> Result<Vec<TranscriptRecord>, OrchestratorError> {
    let file = std::fs::File::open(path).map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
    let mut records: Vec<TranscriptRecord> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| OrchestratorError::Io(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let load_err = |message: String| OrchestratorError::Load {
            path: path.display().to_string(),
            line: n,
            message,
        };
        let raw: serde_json::Value = serde_json::from_str(&line).map_err(|e| load_err(e.to_string()))?;
        match raw.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(TRANSCRIPT_SCHEMA_VERSION) => {}
            Some(v) => return Err(load_err(format!("schema_version {v}, expected {TRANSCRIPT_SCHEMA_VERSION}"))),
            None => return Err(load_err("missing schema_version".into())),
        }
        let record: TranscriptRecord = serde_json::from_value(raw).map_err(|e| load_err(e.to_string()))?;
        if record.observation.experiment() != record.experiment {
            return Err(load_err(format!(
                "{} observation in a {} record",
                record.observation.experiment(),
                record.experiment
            )));
        }
        if let Some(d) = record.decision {
            if !record.observation.vocabulary().contains(d) {
                return Err(load_err(format!("decision {} outside the record's vocabulary", d.token())));
            }
        }
        if record.valid != record.decision.is_some() {
            return Err(load_err("valid flag disagrees with the presence of a decision".into()));
        }
        if let Some(first) = records.first() {
            if first.experiment != record.experiment {
                return Err(load_err(format!(
                    "mixed experiments: {} after {}",
                    record.experiment, first.experiment
                )));
            }
            if first.run_id != record.run_id {
                return Err(load_err(format!("mixed runs: `{}` after `{}`", record.run_id, first.run_id)));
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Analysis rows for the experiment the records belong to.
pub fn analysis_input(records: &[TranscriptRecord]) -> Result<AnalysisInput, OrchestratorError> {
    let experiment = records
        .first()
        .map(|r| r.experiment)
        .ok_or_else(|| OrchestratorError::Analysis("no transcript records".into()))?;
    Ok(match experiment {
        ExperimentId::Queue => AnalysisInput::Queue(
            records
                .iter()
                .filter_map(|r| match &r.observation {
                    Observation::Queue(o) => Some(QueueRow {
                        purchase: r.decision == Some(Decision::Order),
                        wait_time: o.wait_time,
                        q50: o.condition == QueueCondition::Q50,
                        informed: o.role.is_informed(),
                        valid: r.valid,
                    }),
                    _ => None,
                })
                .collect(),
        ),
        ExperimentId::Demand => AnalysisInput::Demand(
            records
                .iter()
                .filter(|r| r.valid)
                .filter_map(|r| match &r.observation {
                    Observation::Demand(o) => Some(DemandRow {
                        level_index: o.level_index,
                        purchase: r.decision == Some(Decision::Purchase),
                    }),
                    _ => None,
                })
                .collect(),
        ),
        ExperimentId::Crowdfund => AnalysisInput::Crowdfund(crowdfund_groups(records)),
    })
}

/// Per matching group: good inventions that offered a bonus and how many of
/// them were funded. Each invention appears in two investor records and is
/// counted once.
pub fn crowdfund_groups(records: &[TranscriptRecord]) -> Vec<CrowdfundGroupRow> {
    let mut groups: BTreeMap<u32, (Regime, BTreeSet<(u8, u8, u8)>, u32, u32)> = BTreeMap::new();
    for r in records {
        let (Observation::Investor(obs), RecordContext::Investor { game, invention, quality, bonus_offered, funded }) =
            (&r.observation, &r.context)
        else {
            continue;
        };
        let entry = groups
            .entry(r.unit_index)
            .or_insert_with(|| (obs.regime, BTreeSet::new(), 0, 0));
        let key = (r.round.unwrap_or(0), *game, *invention);
        if !entry.1.insert(key) {
            continue;
        }
        if *quality == InventionQuality::Good && *bonus_offered {
            entry.2 += 1;
            entry.3 += u32::from(*funded);
        }
    }
    groups
        .into_iter()
        .map(|(group, (regime, _, n, funded))| CrowdfundGroupRow {
            group,
            regime,
            good_bonus_inventions: n,
            good_bonus_funded: funded,
        })
        .collect()
}
