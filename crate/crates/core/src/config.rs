//! JSON run configuration documents.
//!
//! A document names the experiment, prompt design, backend, seed and output
//! directory, with optional sample-plan and oracle overrides. Unknown keys are
//! rejected. Relative paths are resolved against the document's directory.
//! The published schema is bundled as [`CONFIG_SCHEMA`].

use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::agents::{BackendSpec, OracleParams};
use crate::money::Cents;
use crate::observation::ExperimentId;
use crate::orchestrator::{InformedMode, RunConfig, SamplePlan};
use crate::prompt::PromptDesign;

pub const CONFIG_SCHEMA: &str = include_str!("../schema/config.schema.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("{source_name}: {message}")]
    Invalid { source_name: String, message: String },
    #[error("reading {0}")]
    Io(String),
}

/// Backend given either as a name (`"oracle-bayes"`, `"fixture:path"`) or
/// as a tagged object.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct BackendField(pub BackendSpec);

impl<'de> Deserialize<'de> for BackendField {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::String(name) => BackendSpec::from_name(&name)
                .map(BackendField)
                .map_err(|e| D::Error::custom(e.to_string())),
            other => serde_path_to_error::deserialize(other).map(BackendField).map_err(|e| {
                let path = e.path().to_string();
                if path == "." {
                    D::Error::custom(e.inner())
                } else {
                    D::Error::custom(format!("{path}: {}", e.inner()))
                }
            }),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_inventor_revenue() -> Cents {
    Cents(200)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDocument {
    #[serde(rename = "$schema", default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub experiment: ExperimentId,
    #[serde(default = "default_design")]
    pub design: PromptDesign,
    pub backend: BackendField,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub sample_plan: SamplePlan,
    #[serde(default)]
    pub informed_assignment: InformedMode,
    #[serde(default)]
    pub oracle: OracleParams,
    /// Cents paid to an inventor whose invention is funded.
    #[serde(default = "default_inventor_revenue")]
    pub inventor_revenue: Cents,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
}

fn default_design() -> PromptDesign {
    PromptDesign::Baseline
}

impl ConfigDocument {
    /// Parses and validates a document. `source_name` prefixes diagnostics.
    pub fn parse(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let invalid = |message: String| ConfigError::Invalid {
            source_name: source_name.to_string(),
            message,
        };
        let mut de = serde_json::Deserializer::from_str(text);
        let doc: ConfigDocument = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.inner();
            let location = format!("line {}, column {}", inner.line(), inner.column());
            // serde_json appends its own location; strip it to avoid repeating it
            let message = inner.to_string();
            let message = message
                .strip_suffix(&format!(" at line {} column {}", inner.line(), inner.column()))
                .unwrap_or(&message)
                .to_string();
            if path == "." || path == "?" {
                invalid(format!("{location}: {message}"))
            } else {
                invalid(format!("{location}: field `{path}`: {message}"))
            }
        })?;
        de.end().map_err(|e| invalid(e.to_string()))?;
        doc.run_config(Path::new("."))
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if doc.workers == Some(0) {
            return Err(invalid("field `workers`: must be at least 1".into()));
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Run configuration with relative paths resolved against `base`.
    pub fn run_config(&self, base: &Path) -> RunConfig {
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let backend = match &self.backend.0 {
            BackendSpec::Fixture { path, model } => BackendSpec::Fixture {
                path: resolve(path),
                model: model.clone(),
            },
            other => other.clone(),
        };
        RunConfig {
            experiment: self.experiment,
            design: self.design,
            backend,
            sample_plan: self.sample_plan.clone(),
            master_seed: self.seed,
            informed_assignment: self.informed_assignment,
            oracle: self.oracle,
            inventor_revenue: self.inventor_revenue,
            catalog: self.catalog.as_deref().map(resolve),
        }
    }

    pub fn output_dir(&self, base: &Path) -> PathBuf {
        if self.output_dir.is_absolute() {
            self.output_dir.clone()
        } else {
            base.join(&self.output_dir)
        }
    }
}
