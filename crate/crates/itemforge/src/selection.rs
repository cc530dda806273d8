//! Item ranking and top-N selection: convergent-validity ranking from the
//! virtual-respondent matrix, plus the random-ordering and LLM-as-judge
//! baselines.

use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SelectionError;
use crate::metrics::{convergent_validity, Correlation, TraitScoreMode};
use crate::model::{ResponseMatrix, SurveyItem, TraitSpec};
use crate::providers::{ChatMessage, Provider, ProviderRequest, SamplingSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankingMethod {
    Simulation,
    Random,
    LlmJudge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub item_id: String,
    /// None for random ordering and for undefined-CV items.
    pub score: Option<f64>,
    /// Item had no defined CV and was sunk to the bottom.
    #[serde(default)]
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPool {
    pub trait_id: String,
    pub method: RankingMethod,
    pub entries: Vec<RankedEntry>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl RankedPool {
    pub fn item_ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.item_id.clone()).collect()
    }
}

/// Rank a trait's generated pool by convergent validity against the virtual
/// matrix, descending; exact CV ties break by ascending generation index;
/// undefined-CV items sink to the bottom, flagged.
pub fn rank_by_cv(
    pool: &[&SurveyItem],
    matrix: &ResponseMatrix,
    all_items: &[SurveyItem],
) -> Result<RankedPool, SelectionError> {
    let trait_id = pool.first().map(|i| i.trait_id.clone()).unwrap_or_default();
    let mut scored: Vec<(&SurveyItem, Correlation)> = Vec::with_capacity(pool.len());
    for item in pool {
        let cv = convergent_validity(item, matrix, all_items, TraitScoreMode::AllOfficial)?;
        scored.push((item, cv));
    }
    scored.sort_by(|(a, ca), (b, cb)| match (ca.value(), cb.value()) {
        (Some(x), Some(y)) => y
            .partial_cmp(&x)
            .unwrap()
            .then(a.generation_index.cmp(&b.generation_index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.generation_index.cmp(&b.generation_index),
    });
    Ok(RankedPool {
        trait_id,
        method: RankingMethod::Simulation,
        entries: scored
            .into_iter()
            .map(|(item, cv)| RankedEntry {
                item_id: item.item_id.clone(),
                score: cv.value(),
                undefined: !cv.is_defined(),
            })
            .collect(),
        seed: None,
    })
}

/// Seeded uniform random ordering baseline.
pub fn rank_random(pool: &[&SurveyItem], seed: u64) -> RankedPool {
    let trait_id = pool.first().map(|i| i.trait_id.clone()).unwrap_or_default();
    let mut ids: Vec<String> = pool.iter().map(|i| i.item_id.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    RankedPool {
        trait_id,
        method: RankingMethod::Random,
        entries: ids
            .into_iter()
            .map(|item_id| RankedEntry { item_id, score: None, undefined: false })
            .collect(),
        seed: Some(seed),
    }
}

fn judge_prompt(item: &SurveyItem, trait_spec: &TraitSpec) -> String {
    format!(
        "Please evaluate the following psychometric item according to the criteria below.\n\n\
         Item: \"{item}\"\n\
         Target Trait: {name}\n\
         Trait Definition: {def}\n\
         Expected Correlation (direction): {correlation}\n\n\
         <Evaluation criteria>\n\
         1. Validity\n\
         a) Convergent validity - the degree to which the item accurately measures the target trait.\n\
         b) Discriminant validity - the degree to which the item does not substantially measure \
         traits other than the target trait.\n\n\
         2. Reliability\n\
         a) Test-retest reliability - the degree of consistency in responses when the item is \
         administered to the same individual at different times.\n\n\
         <Response format>\n\
         (Use a 1-100 scale, where 1 = very poor and 100 = excellent.):\n\
         Convergent validity: [score 1-100]\n\
         Discriminant validity: [score 1-100]\n\
         Test-retest reliability: [score 1-100]\n\
         Explanation: [brief rationale for each rating]",
        item = item.text,
        name = trait_spec.name,
        def = trait_spec.definition,
        correlation = item.polarity,
    )
}

fn parse_score_line(text: &str, key: &str) -> Result<f64, SelectionError> {
    for line in text.lines() {
        let lower = line.to_lowercase();
        if let Some(rest) = lower.strip_prefix(&key.to_lowercase()) {
            let digits: String = rest
                .chars()
                .skip_while(|c| !c.is_ascii_digit())
                .take_while(|c| c.is_ascii_digit() || *c == '.')
                .collect();
            if let Ok(v) = digits.parse::<f64>() {
                if (1.0..=100.0).contains(&v) {
                    return Ok(v);
                }
            }
        }
    }
    Err(SelectionError::JudgeParse(text.to_string()))
}

/// Parse the three 1-100 scores from a judge reply and return their mean.
pub fn parse_judge_scores(text: &str) -> Result<f64, SelectionError> {
    let cv = parse_score_line(text, "convergent validity:")?;
    let dv = parse_score_line(text, "discriminant validity:")?;
    let rel = parse_score_line(text, "test-retest reliability:")?;
    Ok((cv + dv + rel) / 3.0)
}

/// LLM-as-judge baseline: each item is scored `runs` times (default 10);
/// the item score is the mean over successful runs of the per-run mean of
/// the three criteria. Items with zero successful runs are an error.
pub fn rank_llm_judge(
    pool: &[&SurveyItem],
    trait_spec: &TraitSpec,
    provider: &dyn Provider,
    model: &str,
    runs: usize,
) -> Result<RankedPool, SelectionError> {
    let runs = runs.max(1);
    // Judge calls run concurrently per (item, run); scores land in a keyed
    // store so aggregation is order-independent.
    let results: Mutex<Vec<(usize, Result<f64, SelectionError>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for (idx, item) in pool.iter().enumerate() {
            for run in 0..runs {
                let results = &results;
                scope.spawn(move || {
                    let mut messages = vec![ChatMessage::user(judge_prompt(item, trait_spec))];
                    if run > 0 {
                        // Distinct cache key per run so resampling is real.
                        messages.push(ChatMessage::user(format!("(run {run})")));
                    }
                    let outcome = provider
                        .chat(&ProviderRequest::chat(model, messages, SamplingSettings::default()))
                        .map_err(SelectionError::from)
                        .and_then(|text| parse_judge_scores(&text));
                    results.lock().unwrap().push((idx, outcome));
                });
            }
        }
    });

    let mut per_item: Vec<Vec<f64>> = vec![Vec::new(); pool.len()];
    for (idx, outcome) in results.into_inner().unwrap() {
        if let Ok(score) = outcome {
            per_item[idx].push(score);
        }
    }
    let mut scored: Vec<(&SurveyItem, f64)> = Vec::with_capacity(pool.len());
    for (idx, scores) in per_item.into_iter().enumerate() {
        if scores.is_empty() {
            return Err(SelectionError::JudgeFailure(pool[idx].item_id.clone()));
        }
        scored.push((pool[idx], scores.iter().sum::<f64>() / scores.len() as f64));
    }
    scored.sort_by(|(a, x), (b, y)| {
        y.partial_cmp(x).unwrap().then(a.generation_index.cmp(&b.generation_index))
    });
    let trait_id = pool.first().map(|i| i.trait_id.clone()).unwrap_or_default();
    Ok(RankedPool {
        trait_id,
        method: RankingMethod::LlmJudge,
        entries: scored
            .into_iter()
            .map(|(item, score)| RankedEntry {
                item_id: item.item_id.clone(),
                score: Some(score),
                undefined: false,
            })
            .collect(),
        seed: None,
    })
}

/// First N of the ranking, order preserved.
pub fn select_top_n(ranked: &RankedPool, n: usize) -> Result<Vec<String>, SelectionError> {
    if n == 0 {
        return Err(SelectionError::EmptySelection);
    }
    if n > ranked.entries.len() {
        return Err(SelectionError::SelectionTooLarge { n, pool: ranked.entries.len() });
    }
    Ok(ranked.entries[..n].iter().map(|e| e.item_id.clone()).collect())
}
