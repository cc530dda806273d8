//! Mediator generation: the five strategies (free, CAPS-guided, item-based,
//! WVS-based, demographic sampling), persona-sentence conversion, random
//! insertion into persona profiles, and mediator reversal for low-trait
//! respondents.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::MediatorError;
use crate::model::{Demographics, RespondentProfile, SurveyItem, TraitSpec};
use crate::providers::{ChatMessage, Provider, ProviderRequest, SamplingSettings};

/// The five CAPS mediator categories, in prompt order.
pub const CAPS_CATEGORIES: [&str; 5] = [
    "Situation Encodings",
    "Expectancies and Beliefs",
    "Affective Responses",
    "Goals and Values",
    "Competencies and Self-regulatory Plans",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediatorStrategy {
    Free,
    Caps,
    Item,
    Wvs,
    Sampling,
}

impl MediatorStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            MediatorStrategy::Free => "free",
            MediatorStrategy::Caps => "caps",
            MediatorStrategy::Item => "item",
            MediatorStrategy::Wvs => "wvs",
            MediatorStrategy::Sampling => "sampling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mediator {
    pub mediator_id: String,
    pub trait_id: String,
    pub strategy: MediatorStrategy,
    pub raw_text: String,
    /// First-person sentence form inserted into persona profiles.
    pub persona_sentence: String,
    #[serde(default)]
    pub caps_category: Option<String>,
    /// Originating item id, WVS row index, or reversed-source mediator id.
    #[serde(default)]
    pub source_ref: Option<String>,
}

/// One World Values Survey question row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WvsRow {
    pub topic: String,
    pub question: String,
}

/// Strategy-specific inputs for `generate_mediators`.
#[derive(Debug, Clone, Default)]
pub struct MediatorInputs<'a> {
    pub items: Option<&'a [SurveyItem]>,
    pub wvs_rows: Option<&'a [WvsRow]>,
}

fn chat(provider: &dyn Provider, model: &str, prompt: String) -> Result<String, MediatorError> {
    Ok(provider.chat(&ProviderRequest::chat(
        model,
        vec![ChatMessage::user(prompt)],
        SamplingSettings::default(),
    ))?)
}

fn parse_numbered(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            let s = l.trim();
            let s = s.strip_prefix(['-', '*']).map(str::trim_start).unwrap_or(s);
            let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
            if digits > 0 {
                if let Some(rest) = s[digits..].strip_prefix(['.', ')']) {
                    return rest.trim().to_string();
                }
            }
            s.to_string()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

fn free_prompt(t: &TraitSpec) -> String {
    format!(
        "Trait: {name}\nDefinition: {def}\n\n\
         List possible human characteristics or backgrounds that would be unlikely \
         or contradictory for someone who strongly values {name}. \
         Just number them without detailed explanation. Make many values as possible.",
        name = t.name,
        def = t.definition
    )
}

fn caps_prompt(t: &TraitSpec, category: &str) -> String {
    format!(
        "Trait: {name}\nDefinition: {def}\n\n\
         List possible {category} that could create internal conflict or lead to \
         changes in behavior for someone who strongly values {name}. \
         List as many items as possible. Number each item without detailed explanation.",
        name = t.name,
        def = t.definition
    )
}

fn item_prompt(t: &TraitSpec, item: &SurveyItem) -> String {
    format!(
        "Trait: {name}\nDefinition: {def}\nSurvey Item: {item}\n\n\
         Generate a single personal characteristic, background factor, or life \
         circumstance that could plausibly lead someone—even among people who highly \
         value {name}—to respond contrary to the survey item above.",
        name = t.name,
        def = t.definition,
        item = item.text
    )
}

fn wvs_step1_prompt(row: &WvsRow) -> String {
    format!(
        "Create a concise persona sentence who say 'Yes/Agree/Likely' to the question \
         below. Use \"I\" as the subject.\n\n\
         Question Topic: {topic}\nQuestion: {question}",
        topic = row.topic,
        question = row.question
    )
}

fn wvs_step2_prompt(t: &TraitSpec, persona_sentence: &str) -> String {
    format!(
        "Consider the given values and the personality trait below.\n\
         Determine whether the given values conflict with the personality trait, \
         making it difficult for individuals to respond accurately to questions \
         designed to measure the trait. Answer with a single word: Yes or No.\n\n\
         <Personality Trait>\n{name}: {def}\n\n\
         <Values>\n{sentence}",
        name = t.name,
        def = t.definition,
        sentence = persona_sentence
    )
}

fn conversion_prompt(contents: &[String]) -> String {
    let list = contents
        .iter()
        .enumerate()
        .map(|(i, c)| format!("{}. {c}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "For each of the contents below, write a single sentence introducing a \
         person's persona. Use \"I\" as a subject.\n\n{list}"
    )
}

fn reversal_prompt(sentences: &[String]) -> String {
    let list = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "For each persona sentence below, write a single sentence describing the \
         opposite persona. Use \"I\" as a subject. Number each sentence.\n\n{list}"
    )
}

fn starts_with_i(sentence: &str) -> bool {
    let s = sentence.trim_start();
    s.strip_prefix('I')
        .map(|rest| rest.starts_with([' ', '\'']) || rest.is_empty())
        .unwrap_or(false)
}

/// Convert raw mediator texts into first-person persona sentences,
/// order-preserving. A sentence not starting with "I" is retried once
/// individually; a second failure is a conversion error with the raw text.
pub fn to_persona_sentences(
    mediator_texts: &[String],
    provider: &dyn Provider,
    model: &str,
) -> Result<Vec<String>, MediatorError> {
    if mediator_texts.is_empty() {
        return Err(MediatorError::EmptyInput);
    }
    let reply = chat(provider, model, conversion_prompt(mediator_texts))?;
    let mut sentences = parse_numbered(&reply);
    if sentences.len() != mediator_texts.len() {
        return Err(MediatorError::ConversionFailure(reply));
    }
    for (idx, sentence) in sentences.iter_mut().enumerate() {
        if starts_with_i(sentence) {
            continue;
        }
        let retry = chat(
            provider,
            model,
            conversion_prompt(std::slice::from_ref(&mediator_texts[idx])),
        )?;
        let parsed = parse_numbered(&retry);
        match parsed.first() {
            Some(s) if starts_with_i(s) => *sentence = s.clone(),
            _ => return Err(MediatorError::ConversionFailure(retry)),
        }
    }
    Ok(sentences)
}

/// Run one mediator-generation strategy for one trait. `sampling` is handled
/// by `sample_cards` and rejected here.
pub fn generate_mediators(
    trait_spec: &TraitSpec,
    strategy: MediatorStrategy,
    inputs: &MediatorInputs,
    provider: &dyn Provider,
    model: &str,
) -> Result<Vec<Mediator>, MediatorError> {
    let mut mediators = match strategy {
        MediatorStrategy::Free => {
            let reply = chat(provider, model, free_prompt(trait_spec))?;
            let raws = parse_numbered(&reply);
            if raws.is_empty() {
                return Err(strategy_failure(strategy, trait_spec));
            }
            let sentences = to_persona_sentences(&raws, provider, model)?;
            raws.into_iter()
                .zip(sentences)
                .map(|(raw, persona_sentence)| Mediator {
                    mediator_id: String::new(),
                    trait_id: trait_spec.trait_id.clone(),
                    strategy,
                    raw_text: raw,
                    persona_sentence,
                    caps_category: None,
                    source_ref: None,
                })
                .collect::<Vec<_>>()
        }
        MediatorStrategy::Caps => {
            let mut out = Vec::new();
            for category in CAPS_CATEGORIES {
                let reply = chat(provider, model, caps_prompt(trait_spec, category))?;
                let raws = parse_numbered(&reply);
                if raws.is_empty() {
                    continue;
                }
                let sentences = to_persona_sentences(&raws, provider, model)?;
                for (raw, persona_sentence) in raws.into_iter().zip(sentences) {
                    out.push(Mediator {
                        mediator_id: String::new(),
                        trait_id: trait_spec.trait_id.clone(),
                        strategy,
                        raw_text: raw,
                        persona_sentence,
                        caps_category: Some(category.to_string()),
                        source_ref: None,
                    });
                }
            }
            out
        }
        MediatorStrategy::Item => {
            let items = inputs
                .items
                .ok_or_else(|| MediatorError::MissingInputs("item".into()))?;
            let mut raws = Vec::new();
            let mut refs = Vec::new();
            for item in items {
                let reply = chat(provider, model, item_prompt(trait_spec, item))?;
                let text = reply.trim().to_string();
                if text.is_empty() {
                    continue;
                }
                raws.push(text);
                refs.push(item.item_id.clone());
            }
            if raws.is_empty() {
                return Err(strategy_failure(strategy, trait_spec));
            }
            let sentences = to_persona_sentences(&raws, provider, model)?;
            raws.into_iter()
                .zip(sentences)
                .zip(refs)
                .map(|((raw, persona_sentence), item_id)| Mediator {
                    mediator_id: String::new(),
                    trait_id: trait_spec.trait_id.clone(),
                    strategy,
                    raw_text: raw,
                    persona_sentence,
                    caps_category: None,
                    source_ref: Some(item_id),
                })
                .collect()
        }
        MediatorStrategy::Wvs => {
            let rows = inputs
                .wvs_rows
                .ok_or_else(|| MediatorError::MissingInputs("wvs".into()))?;
            let mut out = Vec::new();
            for (row_idx, row) in rows.iter().enumerate() {
                let sentence = chat(provider, model, wvs_step1_prompt(row))?.trim().to_string();
                if sentence.is_empty() {
                    continue;
                }
                let verdict = chat(provider, model, wvs_step2_prompt(trait_spec, &sentence))?;
                if !parse_conflict_verdict(&verdict)? {
                    continue;
                }
                out.push(Mediator {
                    mediator_id: String::new(),
                    trait_id: trait_spec.trait_id.clone(),
                    strategy,
                    raw_text: row.question.clone(),
                    persona_sentence: sentence,
                    caps_category: None,
                    source_ref: Some(format!("wvs:{row_idx}")),
                });
            }
            out
        }
        MediatorStrategy::Sampling => {
            return Err(MediatorError::MissingInputs(
                "sampling mediators come from sample_cards".into(),
            ));
        }
    };
    if mediators.is_empty() {
        return Err(strategy_failure(strategy, trait_spec));
    }
    for (i, m) in mediators.iter_mut().enumerate() {
        m.mediator_id = format!("{}-{}-{}", trait_spec.trait_id, strategy.as_str(), i + 1);
    }
    Ok(mediators)
}

fn strategy_failure(strategy: MediatorStrategy, t: &TraitSpec) -> MediatorError {
    MediatorError::StrategyFailure {
        strategy: strategy.as_str().into(),
        trait_id: t.trait_id.clone(),
    }
}

/// Binary yes/no verdict from the WVS conflict classification; ambiguous
/// replies error rather than guess.
fn parse_conflict_verdict(reply: &str) -> Result<bool, MediatorError> {
    let lower = reply.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_ascii_alphabetic())
        .filter(|w| !w.is_empty())
        .collect();
    let yes = words.iter().any(|&w| w == "yes");
    let no = words.iter().any(|&w| w == "no");
    match (yes, no) {
        (true, false) => Ok(true),
        (false, true) => Ok(false),
        _ => Err(MediatorError::ClassificationParse(reply.to_string())),
    }
}

/// Format human demographics as sampling-strategy mediators. Empty fields
/// are ingestion errors naming the field and row.
pub fn sample_cards(demographics: &[Demographics]) -> Result<Vec<Mediator>, MediatorError> {
    let mut out = Vec::new();
    for (row, d) in demographics.iter().enumerate() {
        let fields = [
            ("Sex", &d.sex),
            ("Age", &d.age),
            ("Country", &d.country),
            ("Occupation", &d.occupation),
            ("Income", &d.income),
            ("Education", &d.education),
            ("Social Class", &d.social_class),
            ("Religion", &d.religion),
        ];
        for (name, value) in &fields {
            if value.trim().is_empty() {
                return Err(MediatorError::MissingField { row, field: name.to_string() });
            }
        }
        let card = fields
            .iter()
            .map(|(name, value)| format!("{name}: {value}"))
            .collect::<Vec<_>>()
            .join(", ");
        out.push(Mediator {
            mediator_id: format!("sampling-{}", row + 1),
            trait_id: String::new(),
            strategy: MediatorStrategy::Sampling,
            raw_text: card.clone(),
            persona_sentence: card,
            caps_category: None,
            source_ref: Some(format!("demographics:{row}")),
        });
    }
    Ok(out)
}

/// Insert a mediator's persona sentence at a seeded-uniform position in the
/// profile. `None` (ablation mode) returns the profile unchanged.
pub fn integrate_mediator(
    profile: &RespondentProfile,
    mediator: Option<&Mediator>,
    rng: &mut dyn RngCore,
) -> RespondentProfile {
    let Some(mediator) = mediator else {
        return profile.clone();
    };
    let mut out = profile.clone();
    let pos = rng.gen_range(0..=profile.persona_sentences.len());
    out.persona_sentences.insert(pos, mediator.persona_sentence.clone());
    out.mediator_id = Some(mediator.mediator_id.clone());
    out
}

/// Reverse each mediator's persona sentence via the provider (low-trait
/// respondents need mediators that facilitate rather than suppress the
/// trait). Output is index-aligned; strategy tags are preserved and each
/// output links back to its source mediator.
pub fn reverse_mediators(
    mediators: &[Mediator],
    provider: &dyn Provider,
    model: &str,
) -> Result<Vec<Mediator>, MediatorError> {
    if mediators.is_empty() {
        return Err(MediatorError::EmptyInput);
    }
    let sentences: Vec<String> =
        mediators.iter().map(|m| m.persona_sentence.clone()).collect();
    let reply = chat(provider, model, reversal_prompt(&sentences))?;
    let mut reversed = parse_numbered(&reply);
    if reversed.len() != mediators.len() {
        return Err(MediatorError::ConversionFailure(reply));
    }
    for (idx, sentence) in reversed.iter_mut().enumerate() {
        if starts_with_i(sentence) {
            continue;
        }
        let retry = chat(
            provider,
            model,
            reversal_prompt(std::slice::from_ref(&sentences[idx])),
        )?;
        let parsed = parse_numbered(&retry);
        match parsed.first() {
            Some(s) if starts_with_i(s) => *sentence = s.clone(),
            _ => return Err(MediatorError::ConversionFailure(retry)),
        }
    }
    Ok(mediators
        .iter()
        .zip(reversed)
        .map(|(m, persona_sentence)| Mediator {
            mediator_id: format!("{}-rev", m.mediator_id),
            trait_id: m.trait_id.clone(),
            strategy: m.strategy,
            raw_text: m.persona_sentence.clone(),
            persona_sentence,
            caps_category: m.caps_category.clone(),
            source_ref: Some(m.mediator_id.clone()),
        })
        .collect())
}

/// JSONL mediator store, one mediator per line.
pub fn write_store(path: &std::path::Path, mediators: &[Mediator]) -> std::io::Result<()> {
    use std::io::Write;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        for m in mediators {
            let line = serde_json::to_string(m)?;
            writeln!(f, "{line}")?;
        }
    }
    std::fs::rename(tmp, path)
}

pub fn read_store(path: &std::path::Path) -> std::io::Result<Vec<Mediator>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}

/// Read WVS rows from a CSV with columns (topic, question).
pub fn read_wvs_csv(path: &std::path::Path) -> Result<Vec<WvsRow>, csv::Error> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ProviderError;
    use crate::model::{RespondentKind, TheoryTag};
    use crate::providers::MockProvider;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conscientiousness() -> TraitSpec {
        TraitSpec {
            trait_id: "conscientiousness".into(),
            name: "Conscientiousness".into(),
            definition: "A tendency to be organized and dependable.".into(),
            theory: TheoryTag::Big5,
            official_item_ids: vec![],
        }
    }

    /// Mock that answers generation prompts with a short list and conversion
    /// prompts with index-aligned "I ..." sentences.
    fn list_mock() -> MockProvider<impl Fn(&ProviderRequest) -> Result<String, ProviderError> + Send + Sync>
    {
        MockProvider::new(|req: &ProviderRequest| {
            let prompt = &req.inputs[0].content;
            if prompt.contains("write a single sentence introducing") {
                let n = prompt.lines().filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit())).count();
                Ok((1..=n)
                    .map(|i| format!("{i}. I like roles that allow for flexibility and undefined duties. ({i})"))
                    .collect::<Vec<_>>()
                    .join("\n"))
            } else if prompt.contains("respond contrary to the survey item") {
                Ok("Forgetfulness under stress".to_string())
            } else {
                Ok("1. Prefers improvisation\n2. Dislikes routine".to_string())
            }
        })
    }

    #[test]
    fn free_strategy_yields_persona_sentences() {
        let mock = list_mock();
        let t = conscientiousness();
        let mediators =
            generate_mediators(&t, MediatorStrategy::Free, &MediatorInputs::default(), &mock, "m")
                .unwrap();
        assert_eq!(mediators.len(), 2);
        assert!(mediators.iter().all(|m| m.persona_sentence.starts_with("I ")));
        assert!(mediators[0].persona_sentence.contains("flexibility and undefined duties"));
        assert_eq!(mediators[0].mediator_id, "conscientiousness-free-1");
    }

    #[test]
    fn caps_strategy_makes_five_calls_and_records_categories() {
        let mock = list_mock();
        let t = conscientiousness();
        let mediators =
            generate_mediators(&t, MediatorStrategy::Caps, &MediatorInputs::default(), &mock, "m")
                .unwrap();
        // 5 generation calls + 5 conversion calls
        let calls = mock.calls.lock().unwrap();
        let gen_calls = calls
            .iter()
            .filter(|r| r.inputs[0].content.contains("internal conflict"))
            .count();
        assert_eq!(gen_calls, 5);
        drop(calls);
        assert!(mediators.iter().all(|m| m.caps_category.is_some()));
        let categories: std::collections::BTreeSet<_> =
            mediators.iter().map(|m| m.caps_category.clone().unwrap()).collect();
        assert_eq!(categories.len(), 5);
        for c in CAPS_CATEGORIES {
            assert!(categories.contains(c));
        }
    }

    #[test]
    fn item_strategy_one_mediator_per_item() {
        let mock = list_mock();
        let t = conscientiousness();
        let items: Vec<SurveyItem> = (0..3)
            .map(|i| SurveyItem {
                item_id: format!("it{i}"),
                trait_id: t.trait_id.clone(),
                text: format!("I do thing {i}."),
                polarity: crate::model::Polarity::Positive,
                source: crate::model::ItemSource::Generated,
                generator: "g".into(),
                generation_index: i + 1,
            })
            .collect();
        let inputs = MediatorInputs { items: Some(&items), wvs_rows: None };
        let mediators =
            generate_mediators(&t, MediatorStrategy::Item, &inputs, &mock, "m").unwrap();
        assert_eq!(mediators.len(), 3);
        assert_eq!(mediators[0].source_ref.as_deref(), Some("it0"));
    }

    #[test]
    fn wvs_filters_non_conflicting_rows() {
        let mock = MockProvider::new(|req: &ProviderRequest| {
            let prompt = &req.inputs[0].content;
            if prompt.contains("Create a concise persona sentence") {
                if prompt.contains("work") {
                    Ok("I think less importance should be placed on work.".to_string())
                } else {
                    Ok("I value my family above everything.".to_string())
                }
            } else if prompt.contains("Determine whether") {
                if prompt.contains("work") {
                    Ok("Yes".to_string())
                } else {
                    Ok("No".to_string())
                }
            } else {
                unreachable!()
            }
        });
        let rows = vec![
            WvsRow { topic: "Work".into(), question: "Should work matter less?".into() },
            WvsRow { topic: "Family".into(), question: "Is family important?".into() },
        ];
        let inputs = MediatorInputs { items: None, wvs_rows: Some(&rows) };
        let mediators =
            generate_mediators(&conscientiousness(), MediatorStrategy::Wvs, &inputs, &mock, "m")
                .unwrap();
        assert_eq!(mediators.len(), 1);
        assert!(mediators[0].persona_sentence.contains("work"));
    }

    #[test]
    fn wvs_ambiguous_verdict_errors() {
        assert!(parse_conflict_verdict("Yes").unwrap());
        assert!(!parse_conflict_verdict("No, it does not conflict.").unwrap());
        assert!(matches!(
            parse_conflict_verdict("Maybe"),
            Err(MediatorError::ClassificationParse(_))
        ));
        assert!(matches!(
            parse_conflict_verdict("Yes and no"),
            Err(MediatorError::ClassificationParse(_))
        ));
    }

    #[test]
    fn conversion_cardinality_and_alignment() {
        let mock = list_mock();
        let texts: Vec<String> = (0..3).map(|i| format!("text {i}")).collect();
        let sentences = to_persona_sentences(&texts, &mock, "m").unwrap();
        assert_eq!(sentences.len(), 3);
        for (i, s) in sentences.iter().enumerate() {
            assert!(s.ends_with(&format!("({})", i + 1)));
        }
    }

    #[test]
    fn conversion_retries_then_errors() {
        let mock = MockProvider::new(|req: &ProviderRequest| {
            let n = req.inputs[0]
                .content
                .lines()
                .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
                .count();
            Ok((1..=n).map(|i| format!("{i}. Avoids schedules.")).collect::<Vec<_>>().join("\n"))
        });
        let texts = vec!["avoids schedules".to_string()];
        assert!(matches!(
            to_persona_sentences(&texts, &mock, "m"),
            Err(MediatorError::ConversionFailure(_))
        ));
        assert_eq!(mock.call_count(), 2); // initial attempt + one retry
    }

    #[test]
    fn conversion_retry_recovers() {
        let mock = MockProvider::new(|req: &ProviderRequest| {
            let prompt = &req.inputs[0].content;
            let n = prompt
                .lines()
                .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
                .count();
            if n == 1 {
                Ok("1. I avoid strict schedules.".to_string())
            } else {
                Ok("1. I plan ahead.\n2. Avoids schedules.".to_string())
            }
        });
        let texts = vec!["a".to_string(), "b".to_string()];
        let out = to_persona_sentences(&texts, &mock, "m").unwrap();
        assert_eq!(out[1], "I avoid strict schedules.");
    }

    fn profile(n: usize) -> RespondentProfile {
        RespondentProfile {
            respondent_id: "v1".into(),
            kind: RespondentKind::Virtual,
            persona_sentences: (0..n).map(|i| format!("I enjoy hobby {i}.")).collect(),
            mediator_id: None,
            steering: None,
            demographics: None,
        }
    }

    fn mediator() -> Mediator {
        Mediator {
            mediator_id: "m1".into(),
            trait_id: "t".into(),
            strategy: MediatorStrategy::Free,
            raw_text: "raw".into(),
            persona_sentence: "I avoid strict schedules.".into(),
            caps_category: None,
            source_ref: None,
        }
    }

    #[test]
    fn integrate_inserts_exactly_one_sentence() {
        let p = profile(4);
        let m = mediator();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let out = integrate_mediator(&p, Some(&m), &mut rng);
        assert_eq!(out.persona_sentences.len(), 5);
        assert_eq!(out.mediator_id.as_deref(), Some("m1"));
        // multiset of originals preserved, in order
        let without: Vec<&String> = out
            .persona_sentences
            .iter()
            .filter(|s| *s != &m.persona_sentence)
            .collect();
        assert_eq!(without.len(), 4);
        for (a, b) in without.iter().zip(&p.persona_sentences) {
            assert_eq!(*a, b);
        }
        // same seed -> same position
        let mut rng2 = ChaCha8Rng::seed_from_u64(11);
        assert_eq!(integrate_mediator(&p, Some(&m), &mut rng2), out);
    }

    #[test]
    fn integrate_none_is_identity() {
        let p = profile(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(integrate_mediator(&p, None, &mut rng), p);
    }

    #[test]
    fn sample_cards_format() {
        let d = Demographics {
            sex: "Male".into(),
            age: "46".into(),
            country: "Ireland".into(),
            occupation: "Higher administrative".into(),
            income: "Seventh step".into(),
            education: "Bachelor or equivalent (ISCED 6)".into(),
            social_class: "Lower middle class".into(),
            religion: "Do not belong to a denomination".into(),
        };
        let cards = sample_cards(&[d]).unwrap();
        assert_eq!(cards.len(), 1);
        assert!(cards[0].persona_sentence.starts_with("Sex: Male, Age: 46, Country: Ireland"));
        assert_eq!(cards[0].strategy, MediatorStrategy::Sampling);
    }

    #[test]
    fn sample_cards_empty_and_missing_field() {
        assert!(sample_cards(&[]).unwrap().is_empty());
        let mut d = Demographics {
            sex: "F".into(),
            age: "30".into(),
            country: "US".into(),
            occupation: "Clerk".into(),
            income: "Third".into(),
            education: "HS".into(),
            social_class: "Middle".into(),
            religion: "None stated".into(),
        };
        d.religion = "".into();
        match sample_cards(&[d]) {
            Err(MediatorError::MissingField { row: 0, field }) => assert_eq!(field, "Religion"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reverse_mediators_aligned_and_linked() {
        let mock = MockProvider::new(|req: &ProviderRequest| {
            let n = req.inputs[0]
                .content
                .lines()
                .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
                .count();
            Ok((1..=n).map(|i| format!("{i}. I embrace strict schedules. ({i})")).collect::<Vec<_>>().join("\n"))
        });
        let source: Vec<Mediator> = (0..10)
            .map(|i| {
                let mut m = mediator();
                m.mediator_id = format!("m{i}");
                m
            })
            .collect();
        let reversed = reverse_mediators(&source, &mock, "m").unwrap();
        assert_eq!(reversed.len(), 10);
        for (i, r) in reversed.iter().enumerate() {
            assert_eq!(r.source_ref.as_deref(), Some(format!("m{i}").as_str()));
            assert!(r.persona_sentence.ends_with(&format!("({})", i + 1)));
        }
        // deterministic with a deterministic mock
        let again = reverse_mediators(&source, &mock, "m").unwrap();
        assert_eq!(reversed, again);
        assert!(matches!(reverse_mediators(&[], &mock, "m"), Err(MediatorError::EmptyInput)));
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mediators.jsonl");
        let ms = vec![mediator()];
        write_store(&path, &ms).unwrap();
        assert_eq!(read_store(&path).unwrap(), ms);
    }
}
