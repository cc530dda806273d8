//! TOML survey-configuration loading.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use itemforge::model::{LikertScale, SurveyConfig, TheoryTag, TraitLevelMode, TraitSpec};

#[derive(Debug, Deserialize)]
struct FileTrait {
    id: String,
    name: String,
    definition: String,
}

#[derive(Debug, Deserialize)]
struct FileConfig {
    theory: String,
    n_per_trait: usize,
    item_subject: String,
    instruction: String,
    #[serde(default)]
    answer_subject_to_them: bool,
    #[serde(default)]
    neutralize_pronouns: bool,
    #[serde(default = "default_level")]
    trait_level_mode: String,
    scale: Vec<String>,
    #[serde(default)]
    models: BTreeMap<String, String>,
    traits: Vec<FileTrait>,
}

fn default_level() -> String {
    "high".into()
}

#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub survey: SurveyConfig,
    pub models: BTreeMap<String, String>,
}

impl LoadedConfig {
    pub fn model(&self, role: &str) -> String {
        self.models.get(role).cloned().unwrap_or_else(|| "gpt-4.1".to_string())
    }
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let file: FileConfig = toml::from_str(&text).context("parsing config")?;
    let theory = match file.theory.as_str() {
        "big5" => TheoryTag::Big5,
        "schwartz" => TheoryTag::Schwartz,
        "via" => TheoryTag::Via,
        _ => TheoryTag::Custom,
    };
    let trait_level_mode = match file.trait_level_mode.as_str() {
        "high" => TraitLevelMode::High,
        "low" => TraitLevelMode::Low,
        "mixed" => TraitLevelMode::Mixed,
        other => bail!("unknown trait_level_mode: {other}"),
    };
    let survey = SurveyConfig {
        theory,
        scale: LikertScale::new(file.scale)?,
        traits: file
            .traits
            .into_iter()
            .map(|t| TraitSpec {
                trait_id: t.id,
                name: t.name,
                definition: t.definition,
                theory,
                official_item_ids: vec![],
            })
            .collect(),
        n_per_trait: file.n_per_trait,
        item_subject: file.item_subject,
        instruction_template: file.instruction,
        answer_subject_to_them: file.answer_subject_to_them,
        neutralize_pronouns: file.neutralize_pronouns,
        trait_level_mode,
    };
    survey.validate()?;
    Ok(LoadedConfig { survey, models: file.models })
}
