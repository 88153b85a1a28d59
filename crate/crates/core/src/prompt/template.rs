use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::observation::ExperimentId;

/// Substitutes `{{field}}` placeholders. Every placeholder must be bound.
pub fn render(template: &str, fields: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| PromptError::Template("unterminated `{{` placeholder".into()))?;
        let name = after[..end].trim();
        let value = fields
            .get(name)
            .ok_or_else(|| PromptError::Template(format!("no value bound for placeholder `{name}`")))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    if out.trim().is_empty() {
        return Err(PromptError::Template("rendered text is empty".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTemplate {
    pub body: String,
    pub cot_suffix: String,
}

/// All text fragments for one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplateSet {
    pub experiment: ExperimentId,
    pub general_instruction: String,
    pub compliance_confirmation: String,
    pub formation_prelude: String,
    pub navigation_suffix: String,
    /// Keyed by variant: `uninformed`, `informed`, `inventor`, `investor`, `default`.
    pub rounds: BTreeMap<String, RoundTemplate>,
}

macro_rules! bundled {
    ($exp:literal, $file:literal) => {
        include_str!(concat!("../../templates/", $exp, "/", $file))
    };
}

fn clean(text: &str) -> String {
    text.trim_end().to_string()
}

impl PromptTemplateSet {
    pub fn bundled(experiment: ExperimentId) -> Self {
        match experiment {
            ExperimentId::Queue => {
                let cot = clean(bundled!("queue", "cot_suffix.txt"));
                Self {
                    experiment,
                    general_instruction: clean(bundled!("queue", "general_instruction.txt")),
                    compliance_confirmation: clean(bundled!("queue", "compliance_confirmation.txt")),
                    formation_prelude: clean(bundled!("queue", "formation_prelude.txt")),
                    navigation_suffix: clean(bundled!("queue", "navigation_suffix.txt")),
                    rounds: BTreeMap::from([
                        (
                            "uninformed".to_string(),
                            RoundTemplate {
                                body: clean(bundled!("queue", "round_uninformed.txt")),
                                cot_suffix: cot.clone(),
                            },
                        ),
                        (
                            "informed".to_string(),
                            RoundTemplate {
                                body: clean(bundled!("queue", "round_informed.txt")),
                                cot_suffix: cot,
                            },
                        ),
                    ]),
                }
            }
            ExperimentId::Demand => Self {
                experiment,
                general_instruction: clean(bundled!("demand", "general_instruction.txt")),
                compliance_confirmation: clean(bundled!("demand", "compliance_confirmation.txt")),
                formation_prelude: clean(bundled!("demand", "formation_prelude.txt")),
                navigation_suffix: clean(bundled!("demand", "navigation_suffix.txt")),
                rounds: BTreeMap::from([(
                    "default".to_string(),
                    RoundTemplate {
                        body: clean(bundled!("demand", "round.txt")),
                        cot_suffix: clean(bundled!("demand", "cot_suffix.txt")),
                    },
                )]),
            },
            ExperimentId::Crowdfund => Self {
                experiment,
                general_instruction: clean(bundled!("crowdfund", "general_instruction.txt")),
                compliance_confirmation: clean(bundled!("crowdfund", "compliance_confirmation.txt")),
                formation_prelude: clean(bundled!("crowdfund", "formation_prelude.txt")),
                navigation_suffix: clean(bundled!("crowdfund", "navigation_suffix.txt")),
                rounds: BTreeMap::from([
                    (
                        "inventor".to_string(),
                        RoundTemplate {
                            body: clean(bundled!("crowdfund", "round_inventor.txt")),
                            cot_suffix: clean(bundled!("crowdfund", "cot_suffix_inventor.txt")),
                        },
                    ),
                    (
                        "investor".to_string(),
                        RoundTemplate {
                            body: clean(bundled!("crowdfund", "round_investor.txt")),
                            cot_suffix: clean(bundled!("crowdfund", "cot_suffix.txt")),
                        },
                    ),
                ]),
            },
        }
    }

    /// Loads `<dir>/<experiment>/` laid out like the bundled templates.
    /// `round_<variant>.txt` pairs with `cot_suffix_<variant>.txt`, falling
    /// back to `cot_suffix.txt`; a bare `round.txt` is the `default` variant.
    pub fn load(dir: &Path, experiment: ExperimentId) -> Result<Self, PromptError> {
        let base = dir.join(experiment.as_str());
        let read = |name: &str| -> Result<String, PromptError> {
            let path = base.join(name);
            std::fs::read_to_string(&path)
                .map(|s| clean(&s))
                .map_err(|e| PromptError::Config(format!("reading {}: {e}", path.display())))
        };
        let mut rounds = BTreeMap::new();
        let entries = std::fs::read_dir(&base)
            .map_err(|e| PromptError::Config(format!("reading {}: {e}", base.display())))?;
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect();
        names.sort();
        for name in names {
            let Some(stem) = name.strip_suffix(".txt") else { continue };
            let variant = match stem {
                "round" => "default",
                s => match s.strip_prefix("round_") {
                    Some(v) => v,
                    None => continue,
                },
            };
            let cot_name = format!("cot_suffix_{variant}.txt");
            let cot_suffix = if base.join(&cot_name).exists() {
                read(&cot_name)?
            } else {
                read("cot_suffix.txt")?
            };
            rounds.insert(
                variant.to_string(),
                RoundTemplate {
                    body: read(&name)?,
                    cot_suffix,
                },
            );
        }
        if rounds.is_empty() {
            return Err(PromptError::Config(format!(
                "no round templates in {}",
                base.display()
            )));
        }
        Ok(Self {
            experiment,
            general_instruction: read("general_instruction.txt")?,
            compliance_confirmation: read("compliance_confirmation.txt")?,
            formation_prelude: read("formation_prelude.txt")?,
            navigation_suffix: read("navigation_suffix.txt")?,
            rounds,
        })
    }

    pub fn round(&self, variant: &str) -> Result<&RoundTemplate, PromptError> {
        self.rounds.get(variant).ok_or_else(|| {
            PromptError::Config(format!(
                "{} templates have no `{variant}` round",
                self.experiment
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_and_rejects_unbound() {
        let f = BTreeMap::from([("w", "2".to_string())]);
        assert_eq!(render("wait {{w}} / {{ w }}", &f).unwrap(), "wait 2 / 2");
        assert!(render("{{missing}}", &f).is_err());
        assert!(render("open {{w", &f).is_err());
        assert!(render("  ", &f).is_err());
    }

    #[test]
    fn bundled_sets_match_directory_layout() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("templates");
        for exp in ExperimentId::ALL {
            assert_eq!(PromptTemplateSet::load(&dir, exp).unwrap(), PromptTemplateSet::bundled(exp));
        }
    }
}
