//! Shared domain vocabulary: Likert scales, traits, items, respondents,
//! responses, and the reverse-coding primitive every metric depends on.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Normalize a choice label for comparison: trim, collapse internal
/// whitespace, case-insensitive.
pub fn normalize_label(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// An ordered Likert scale. `labels[0]` is the most-agree choice and maps
/// to the numeric value `L` (the scale size); the last label maps to 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertScale {
    labels: Vec<String>,
}

impl LikertScale {
    pub fn new(labels: Vec<String>) -> Result<Self, ModelError> {
        if labels.len() < 2 {
            return Err(ModelError::InvalidScale("scale needs at least 2 labels".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for l in &labels {
            if !seen.insert(normalize_label(l)) {
                return Err(ModelError::InvalidScale(format!("duplicate label: {l}")));
            }
        }
        Ok(Self { labels })
    }

    /// Number of scale points, `L`.
    pub fn size(&self) -> i32 {
        self.labels.len() as i32
    }

    /// Labels in most-agree-first order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Numeric value of a label; `L` = most agreement, 1 = least.
    pub fn label_to_value(&self, label: &str) -> Result<i32, ModelError> {
        let norm = normalize_label(label);
        for (idx, l) in self.labels.iter().enumerate() {
            if normalize_label(l) == norm {
                return Ok(self.size() - idx as i32);
            }
        }
        Err(ModelError::UnknownLabel(label.to_string()))
    }

    pub fn value_to_label(&self, value: i32) -> Result<&str, ModelError> {
        if value < 1 || value > self.size() {
            return Err(ModelError::ValueOutOfRange { value: value as f64, size: self.size() });
        }
        Ok(&self.labels[(self.size() - value) as usize])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoryTag {
    Big5,
    Schwartz,
    Via,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitSpec {
    pub trait_id: String,
    pub name: String,
    pub definition: String,
    pub theory: TheoryTag,
    #[serde(default)]
    pub official_item_ids: Vec<String>,
}

impl TraitSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.definition.trim().is_empty() {
            return Err(ModelError::MissingDefinition(self.trait_id.clone()));
        }
        Ok(())
    }
}

/// Trait-level mode for virtual respondents: all-high, all-low, or an even
/// mix of the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraitLevelMode {
    High,
    Low,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraitLevel {
    High,
    Low,
}

/// Configuration for one survey: theory, scale, trait roster, selection
/// size, and the prompt-transform switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyConfig {
    pub theory: TheoryTag,
    pub scale: LikertScale,
    pub traits: Vec<TraitSpec>,
    /// Items selected per trait (N); matches the official survey size.
    pub n_per_trait: usize,
    /// Grammatical subject generated items must start with ("I" or "They").
    pub item_subject: String,
    pub instruction_template: String,
    /// Replace "Me" with "Them" in answer-choice labels shown to virtual
    /// respondents (PVQ / VIA).
    #[serde(default)]
    pub answer_subject_to_them: bool,
    /// Replace he/she pronouns with "they" in item text (PVQ).
    #[serde(default)]
    pub neutralize_pronouns: bool,
    #[serde(default = "default_trait_level_mode")]
    pub trait_level_mode: TraitLevelMode,
}

fn default_trait_level_mode() -> TraitLevelMode {
    TraitLevelMode::High
}

impl SurveyConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_per_trait < 1 {
            return Err(ModelError::InvalidConfig("n_per_trait must be >= 1".into()));
        }
        if self.traits.is_empty() {
            return Err(ModelError::InvalidConfig("no traits configured".into()));
        }
        for t in &self.traits {
            t.validate()?;
        }
        Ok(())
    }

    pub fn trait_spec(&self, trait_id: &str) -> Result<&TraitSpec, ModelError> {
        self.traits
            .iter()
            .find(|t| t.trait_id == trait_id)
            .ok_or_else(|| ModelError::UnknownTrait(trait_id.to_string()))
    }
}

/// Expected correlation direction between an item and its target trait.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "+1")]
    Positive,
    #[serde(rename = "-1")]
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemSource {
    Official,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyItem {
    #[serde(rename = "id")]
    pub item_id: String,
    #[serde(rename = "trait")]
    pub trait_id: String,
    pub text: String,
    pub polarity: Polarity,
    pub source: ItemSource,
    #[serde(default)]
    pub generator: String,
    #[serde(rename = "gen_index")]
    pub generation_index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RespondentKind {
    Human,
    Virtual,
    Synthetic,
}

/// Eight demographic fields collected for human respondents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demographics {
    pub sex: String,
    pub age: String,
    pub country: String,
    pub occupation: String,
    pub income: String,
    pub education: String,
    pub social_class: String,
    pub religion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RespondentProfile {
    pub respondent_id: String,
    pub kind: RespondentKind,
    #[serde(default)]
    pub persona_sentences: Vec<String>,
    #[serde(default)]
    pub mediator_id: Option<String>,
    /// (trait_id, level) steering; present iff kind != human.
    #[serde(default)]
    pub steering: Option<(String, TraitLevel)>,
    #[serde(default)]
    pub demographics: Option<Demographics>,
}

impl RespondentProfile {
    pub fn validate(&self) -> Result<(), ModelError> {
        match self.kind {
            RespondentKind::Human => {
                if self.steering.is_some() {
                    return Err(ModelError::InvalidProfile(format!(
                        "human respondent {} has trait steering",
                        self.respondent_id
                    )));
                }
            }
            RespondentKind::Virtual => {
                if self.persona_sentences.is_empty() {
                    return Err(ModelError::InvalidProfile(format!(
                        "virtual respondent {} has no persona sentences",
                        self.respondent_id
                    )));
                }
            }
            RespondentKind::Synthetic => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerProvenance {
    Raw,
    OrderAveraged,
}

/// One numeric answer. Raw answers are integers in 1..=L; order-averaged
/// answers are means of exactly two raws, so half-points are exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnswerValue {
    value: f64,
    provenance: AnswerProvenance,
}

impl AnswerValue {
    pub fn raw(value: i32, scale: &LikertScale) -> Result<Self, ModelError> {
        if value < 1 || value > scale.size() {
            return Err(ModelError::ValueOutOfRange { value: value as f64, size: scale.size() });
        }
        Ok(Self { value: value as f64, provenance: AnswerProvenance::Raw })
    }

    /// Mean of two raw answers (the double-order query rule).
    pub fn order_averaged(a: Self, b: Self) -> Result<Self, ModelError> {
        if a.provenance != AnswerProvenance::Raw || b.provenance != AnswerProvenance::Raw {
            return Err(ModelError::InvalidConfig(
                "order-averaged values must combine exactly two raw answers".into(),
            ));
        }
        Ok(Self { value: (a.value + b.value) / 2.0, provenance: AnswerProvenance::OrderAveraged })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn provenance(&self) -> AnswerProvenance {
        self.provenance
    }

    /// From an already-averaged numeric value (matrix deserialization).
    pub fn from_f64(value: f64, scale: &LikertScale) -> Result<Self, ModelError> {
        if !(1.0..=scale.size() as f64).contains(&value) {
            return Err(ModelError::ValueOutOfRange { value, size: scale.size() });
        }
        let provenance = if value.fract() == 0.0 {
            AnswerProvenance::Raw
        } else {
            AnswerProvenance::OrderAveraged
        };
        Ok(Self { value, provenance })
    }
}

/// Reverse-code an answer: a -> (L + 1) - a. Involution over [1, L].
pub fn reverse_code(a: AnswerValue, scale: &LikertScale) -> Result<AnswerValue, ModelError> {
    let l = scale.size() as f64;
    if a.value < 1.0 || a.value > l {
        return Err(ModelError::ValueOutOfRange { value: a.value, size: scale.size() });
    }
    Ok(AnswerValue { value: (l + 1.0) - a.value, provenance: a.provenance })
}

/// Respondents x items -> answers, with missing cells allowed. Values are
/// stored raw (never reverse-coded); reverse coding happens in the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    scale: LikertScale,
    cells: BTreeMap<(String, String), AnswerValue>,
}

impl ResponseMatrix {
    pub fn new(scale: LikertScale) -> Self {
        Self { scale, cells: BTreeMap::new() }
    }

    pub fn scale(&self) -> &LikertScale {
        &self.scale
    }

    pub fn insert(
        &mut self,
        respondent_id: &str,
        item_id: &str,
        value: AnswerValue,
    ) -> Result<(), ModelError> {
        let l = self.scale.size() as f64;
        if value.value < 1.0 || value.value > l {
            return Err(ModelError::ValueOutOfRange { value: value.value, size: self.scale.size() });
        }
        let key = (respondent_id.to_string(), item_id.to_string());
        if self.cells.contains_key(&key) {
            return Err(ModelError::DuplicateCell {
                respondent: respondent_id.to_string(),
                item: item_id.to_string(),
            });
        }
        self.cells.insert(key, value);
        Ok(())
    }

    pub fn get(&self, respondent_id: &str, item_id: &str) -> Option<AnswerValue> {
        self.cells.get(&(respondent_id.to_string(), item_id.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn respondent_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.cells.keys().map(|(r, _)| r.as_str()).collect();
        ids.dedup();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn item_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> =
            self.cells.keys().map(|(_, i)| i.as_str()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
        ids.sort_unstable();
        ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, AnswerValue)> + '_ {
        self.cells.iter().map(|((r, i), v)| (r.as_str(), i.as_str(), *v))
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarity::Positive => write!(f, "+1"),
            Polarity::Negative => write!(f, "-1"),
        }
    }
}
