//! Virtual-respondent simulation: prompt assembly, double-order querying
//! against a backend (live provider, replay cache, or synthetic oracle),
//! answer parsing, and ResponseMatrix production.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ModelError, SimError};
use crate::model::{
    normalize_label, AnswerValue, LikertScale, RespondentKind, RespondentProfile, ResponseMatrix,
    SurveyConfig, SurveyItem, TraitLevel,
};
use crate::providers::{ChatMessage, Provider, ProviderRequest, SamplingSettings};

/// Order in which answer choices appear in the prompt. Descending is
/// most-agree first (high-to-low); ascending is the reverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChoiceOrder {
    Descending,
    Ascending,
}

impl ChoiceOrder {
    pub const BOTH: [ChoiceOrder; 2] = [ChoiceOrder::Descending, ChoiceOrder::Ascending];

    pub fn as_str(self) -> &'static str {
        match self {
            ChoiceOrder::Descending => "descending",
            ChoiceOrder::Ascending => "ascending",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationPlan {
    pub config: SurveyConfig,
    pub respondents: Vec<RespondentProfile>,
    /// Generated + official items; every respondent answers all of them.
    pub items: Vec<SurveyItem>,
    pub backend_tag: String,
    pub concurrency: usize,
    pub seed: u64,
    /// Include the trait-steering opening sentence. Disabled only by the
    /// persona-only component ablation.
    pub include_steering: bool,
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<(), SimError> {
        self.config.validate()?;
        if self.respondents.is_empty() {
            return Err(ModelError::InvalidConfig("plan needs at least one respondent".into()).into());
        }
        for r in &self.respondents {
            r.validate()?;
        }
        for item in &self.items {
            self.config.trait_spec(&item.trait_id)?;
        }
        Ok(())
    }
}

/// Replace standalone he/she pronouns with "they", preserving initial caps.
fn neutralize_pronouns(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    for c in text.chars().chain(std::iter::once('\0')) {
        if c.is_alphabetic() || c == '\'' {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push_str(match word.as_str() {
                "he" | "she" => "they",
                "He" | "She" => "They",
                _ => &word,
            });
            word.clear();
        }
        if c != '\0' {
            out.push(c);
        }
    }
    out
}

/// Replace the standalone word "Me"/"me" with "Them"/"them" in a choice label.
fn me_to_them(label: &str) -> String {
    label
        .split(' ')
        .map(|w| match w {
            "Me" => "Them",
            "me" => "them",
            _ => w,
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Choice labels as shown to the virtual respondent: order applied, subject
/// transform applied, no numbering or letter labels.
pub fn prompt_choices(scale: &LikertScale, order: ChoiceOrder, config: &SurveyConfig) -> Vec<String> {
    let mut labels: Vec<String> = scale
        .labels()
        .iter()
        .map(|l| if config.answer_subject_to_them { me_to_them(l) } else { l.clone() })
        .collect();
    if order == ChoiceOrder::Ascending {
        labels.reverse();
    }
    labels
}

/// Assemble one virtual-respondent prompt: steering sentence, trait
/// definition, mediator-integrated persona, instruction block, statement,
/// and label-free answer choices in the requested order.
pub fn assemble_prompt(
    respondent: &RespondentProfile,
    item: &SurveyItem,
    order: ChoiceOrder,
    config: &SurveyConfig,
) -> Result<String, SimError> {
    assemble_prompt_with(respondent, item, order, config, true)
}

/// `assemble_prompt` with the steering sentence optional (persona-only
/// component ablation).
pub fn assemble_prompt_with(
    respondent: &RespondentProfile,
    item: &SurveyItem,
    order: ChoiceOrder,
    config: &SurveyConfig,
    include_steering: bool,
) -> Result<String, SimError> {
    if respondent.kind == RespondentKind::Human {
        return Err(ModelError::InvalidProfile(format!(
            "cannot assemble a simulation prompt for human respondent {}",
            respondent.respondent_id
        ))
        .into());
    }
    if config.instruction_template.trim().is_empty() {
        return Err(SimError::MissingTemplate(format!("{:?}", config.theory)));
    }
    let spec = config.trait_spec(&item.trait_id)?;
    let level = respondent.steering.as_ref().map(|(_, l)| *l).unwrap_or(TraitLevel::High);
    let steering = match level {
        TraitLevel::High => format!("I highly value {}.", spec.name),
        TraitLevel::Low => format!("I oppose {}.", spec.name),
    };
    let persona = respondent.persona_sentences.join(" ");
    let opening = if include_steering {
        format!("{steering} {definition}", definition = spec.definition)
    } else {
        String::new()
    };
    let statement = if config.neutralize_pronouns {
        neutralize_pronouns(&item.text)
    } else {
        item.text.clone()
    };
    let choices = prompt_choices(&config.scale, order, config).join(", ");
    let header = if opening.is_empty() { persona } else { format!("{opening}\n{persona}") };
    Ok(format!(
        "{header}\n\n\
         <Instruction>\n{instruction}\n\n\
         <Statement>\n{statement}\n\n\
         <Answer Choices>\n[{choices}]",
        instruction = config.instruction_template,
    ))
}

/// Find exactly one scale label in free-form LLM text. Matching is
/// whitespace/case-insensitive and longest-label-first so "Not Like Them at
/// All" is never mistaken for its substring "Not Like Them".
pub fn parse_answer(llm_text: &str, scale: &LikertScale) -> Result<AnswerValue, SimError> {
    let haystack = normalize_label(llm_text);
    let mut labels: Vec<&String> = scale.labels().iter().collect();
    labels.sort_by_key(|l| std::cmp::Reverse(normalize_label(l).len()));
    // Character spans already claimed by a longer label's match.
    let mut claimed: Vec<(usize, usize)> = Vec::new();
    let mut found: Vec<&String> = Vec::new();
    for label in labels {
        let needle = normalize_label(label);
        let mut start = 0;
        let mut hit = false;
        while let Some(pos) = haystack[start..].find(&needle) {
            let begin = start + pos;
            let end = begin + needle.len();
            let inside = claimed.iter().any(|&(a, b)| begin >= a && end <= b);
            if !inside {
                hit = true;
                claimed.push((begin, end));
            }
            start = end;
        }
        if hit {
            found.push(label);
        }
    }
    match found.as_slice() {
        [] => Err(SimError::NoLabel(llm_text.to_string())),
        [label] => Ok(AnswerValue::raw(scale.label_to_value(label)?, scale)?),
        _ => Err(SimError::AmbiguousLabels(llm_text.to_string())),
    }
}

/// Parameters of the synthetic oracle backend. Missing entries fall back to
/// θ = 0, λ = 1, b = 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticRespondentParams {
    /// respondent_id -> trait_id -> latent θ.
    pub theta: BTreeMap<String, BTreeMap<String, f64>>,
    /// item_id -> loading λ.
    pub lambda: BTreeMap<String, f64>,
    /// item_id -> offset b.
    pub offset: BTreeMap<String, f64>,
    pub sigma: f64,
    pub seed: u64,
}

impl SyntheticRespondentParams {
    pub fn new(seed: u64, sigma: f64) -> Self {
        Self { theta: BTreeMap::new(), lambda: BTreeMap::new(), offset: BTreeMap::new(), sigma, seed }
    }

    fn theta_of(&self, respondent_id: &str, trait_id: &str) -> f64 {
        self.theta
            .get(respondent_id)
            .and_then(|m| m.get(trait_id))
            .copied()
            .unwrap_or(0.0)
    }
}

/// Counter-based RNG keyed by (seed, respondent, item, order): identical
/// across reruns and independent of evaluation order.
fn keyed_rng(seed: u64, respondent_id: &str, item_id: &str, order: ChoiceOrder) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0]);
    hasher.update(respondent_id.as_bytes());
    hasher.update([0]);
    hasher.update(item_id.as_bytes());
    hasher.update([0]);
    hasher.update(order.as_str().as_bytes());
    let digest = hasher.finalize();
    ChaCha8Rng::seed_from_u64(u64::from_le_bytes(digest[..8].try_into().unwrap()))
}

/// Oracle answer: clamp(round(c + polarity·λ·θ + b + ε), 1, L) with
/// c = (L+1)/2 and ε ~ Normal(0, σ).
pub fn synthetic_answer(
    params: &SyntheticRespondentParams,
    respondent: &RespondentProfile,
    item: &SurveyItem,
    order: ChoiceOrder,
    scale: &LikertScale,
) -> AnswerValue {
    let l = scale.size();
    let c = (l as f64 + 1.0) / 2.0;
    let theta = params.theta_of(&respondent.respondent_id, &item.trait_id);
    let lambda = params.lambda.get(&item.item_id).copied().unwrap_or(1.0);
    let b = params.offset.get(&item.item_id).copied().unwrap_or(0.0);
    let eps = if params.sigma > 0.0 {
        let mut rng = keyed_rng(params.seed, &respondent.respondent_id, &item.item_id, order);
        Normal::new(0.0, params.sigma).expect("sigma validated positive").sample(&mut rng)
    } else {
        0.0
    };
    let value = (c + item.polarity.sign() * lambda * theta + b + eps).round() as i32;
    AnswerValue::raw(value.clamp(1, l), scale).expect("clamped into scale range")
}

/// Respondent backend: live provider, replay provider, or synthetic oracle.
pub enum Backend<'a> {
    Provider { provider: &'a dyn Provider, model: String, sampling: SamplingSettings },
    Synthetic(SyntheticRespondentParams),
}

impl Backend<'_> {
    pub fn tag(&self) -> String {
        match self {
            Backend::Provider { model, .. } => format!("provider:{model}"),
            Backend::Synthetic(p) => format!("synthetic:seed={}", p.seed),
        }
    }
}

/// One raw-log record: a single (respondent, item, order) query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    pub respondent_id: String,
    pub item_id: String,
    pub order: ChoiceOrder,
    pub prompt_hash: String,
    pub raw_text: String,
    /// None when the answer stayed unparseable after the retry.
    pub parsed: Option<f64>,
    pub timestamp: u64,
}

#[derive(Debug)]
pub struct SurveyRun {
    pub matrix: ResponseMatrix,
    pub raw_log: Vec<RawRecord>,
    /// (respondent_id, item_id) cells missing after retries.
    pub missing: Vec<(String, String)>,
    pub backend_tag: String,
}

fn now_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn prompt_hash(prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(prompt.as_bytes());
    format!("{:x}", h.finalize())
}

fn query_once(
    backend: &Backend,
    plan: &SimulationPlan,
    respondent: &RespondentProfile,
    item: &SurveyItem,
    order: ChoiceOrder,
) -> Result<RawRecord, SimError> {
    let prompt =
        assemble_prompt_with(respondent, item, order, &plan.config, plan.include_steering)?;
    let hash = prompt_hash(&prompt);
    match backend {
        Backend::Synthetic(params) => {
            let answer = synthetic_answer(params, respondent, item, order, &plan.config.scale);
            let label = plan.config.scale.value_to_label(answer.value() as i32)?.to_string();
            Ok(RawRecord {
                respondent_id: respondent.respondent_id.clone(),
                item_id: item.item_id.clone(),
                order,
                prompt_hash: hash,
                raw_text: label,
                parsed: Some(answer.value()),
                timestamp: now_secs(),
            })
        }
        Backend::Provider { provider, model, sampling } => {
            let mut messages = vec![ChatMessage::user(prompt)];
            let mut text =
                provider.chat(&ProviderRequest::chat(model, messages.clone(), sampling.clone()))?;
            let mut parsed = parse_answer(&text, &plan.config.scale);
            if matches!(parsed, Err(SimError::NoLabel(_) | SimError::AmbiguousLabels(_))) {
                // One retry with an explicit format reminder; the nudge also
                // gives the request a distinct cache key.
                messages.push(ChatMessage::user(
                    "Answer with exactly one of the answer choices, verbatim.".to_string(),
                ));
                text = provider.chat(&ProviderRequest::chat(model, messages, sampling.clone()))?;
                parsed = parse_answer(&text, &plan.config.scale);
            }
            let value = match parsed {
                Ok(v) => Some(v.value()),
                Err(SimError::NoLabel(_) | SimError::AmbiguousLabels(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(RawRecord {
                respondent_id: respondent.respondent_id.clone(),
                item_id: item.item_id.clone(),
                order,
                prompt_hash: hash,
                raw_text: text,
                parsed: value,
                timestamp: now_secs(),
            })
        }
    }
}

fn append_checkpoint(path: &Path, record: &RawRecord) -> Result<(), SimError> {
    use std::io::Write;
    let line = serde_json::to_string(record)
        .map_err(|e| SimError::Checkpoint(e.to_string()))?;
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| SimError::Checkpoint(e.to_string()))?;
    writeln!(f, "{line}").map_err(|e| SimError::Checkpoint(e.to_string()))?;
    f.flush().map_err(|e| SimError::Checkpoint(e.to_string()))?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Vec<RawRecord>, SimError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Checkpoint(e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| SimError::Checkpoint(e.to_string())))
        .collect()
}

/// Run the double-order survey. Every (respondent, item) cell is queried in
/// both choice orders; the stored value is the mean of the two raws. Cells
/// with any raw missing after the retry are absent from the matrix and
/// listed in `missing`. Output is independent of the concurrency limit and
/// request completion order. A checkpoint file makes interrupted runs
/// resumable without re-querying completed queries.
pub fn run_survey(
    plan: &SimulationPlan,
    backend: &Backend,
    checkpoint: Option<&Path>,
) -> Result<SurveyRun, SimError> {
    plan.validate()?;
    let mut done: BTreeMap<(String, String, ChoiceOrder), RawRecord> = BTreeMap::new();
    if let Some(path) = checkpoint {
        for rec in load_checkpoint(path)? {
            done.insert((rec.respondent_id.clone(), rec.item_id.clone(), rec.order), rec);
        }
    }

    let mut work: Vec<(usize, usize, ChoiceOrder)> = Vec::new();
    for (ri, r) in plan.respondents.iter().enumerate() {
        for (ii, item) in plan.items.iter().enumerate() {
            for order in ChoiceOrder::BOTH {
                if !done.contains_key(&(r.respondent_id.clone(), item.item_id.clone(), order)) {
                    work.push((ri, ii, order));
                }
            }
        }
    }

    let cursor = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<RawRecord, SimError>>> = Mutex::new(Vec::new());
    let workers = plan.concurrency.max(1).min(work.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = cursor.fetch_add(1, Ordering::Relaxed);
                let Some(&(ri, ii, order)) = work.get(idx) else { break };
                let outcome =
                    query_once(backend, plan, &plan.respondents[ri], &plan.items[ii], order);
                results.lock().unwrap().push(outcome);
            });
        }
    });

    let mut backend_failures = 0usize;
    for outcome in results.into_inner().unwrap() {
        match outcome {
            Ok(rec) => {
                if let Some(path) = checkpoint {
                    append_checkpoint(path, &rec)?;
                }
                done.insert((rec.respondent_id.clone(), rec.item_id.clone(), rec.order), rec);
            }
            Err(_) => backend_failures += 1,
        }
    }

    let total = plan.respondents.len() * plan.items.len() * 2;
    if backend_failures > 0 {
        return Err(SimError::PartialRun { completed: done.len(), total });
    }

    let mut matrix = ResponseMatrix::new(plan.config.scale.clone());
    let mut missing = Vec::new();
    for r in &plan.respondents {
        for item in &plan.items {
            let get = |order| {
                done.get(&(r.respondent_id.clone(), item.item_id.clone(), order))
                    .and_then(|rec| rec.parsed)
            };
            match (get(ChoiceOrder::Descending), get(ChoiceOrder::Ascending)) {
                (Some(a), Some(b)) => {
                    let a = AnswerValue::raw(a as i32, &plan.config.scale)?;
                    let b = AnswerValue::raw(b as i32, &plan.config.scale)?;
                    matrix.insert(
                        &r.respondent_id,
                        &item.item_id,
                        AnswerValue::order_averaged(a, b)?,
                    )?;
                }
                _ => missing.push((r.respondent_id.clone(), item.item_id.clone())),
            }
        }
    }
    let raw_log: Vec<RawRecord> = done.into_values().collect();
    Ok(SurveyRun { matrix, raw_log, missing, backend_tag: backend.tag() })
}

/// Serialize the matrix as CSV: rows = respondents, columns = item ids,
/// empty cell = missing.
pub fn matrix_to_csv(matrix: &ResponseMatrix) -> String {
    let items = matrix.item_ids();
    let mut out = String::from("respondent_id");
    for i in &items {
        out.push(',');
        out.push_str(i);
    }
    out.push('\n');
    for r in matrix.respondent_ids() {
        out.push_str(r);
        for i in &items {
            out.push(',');
            if let Some(v) = matrix.get(r, i) {
                out.push_str(&format!("{}", v.value()));
            }
        }
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv(text: &str, scale: &LikertScale) -> Result<ResponseMatrix, SimError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| SimError::Checkpoint(e.to_string()))?
        .clone();
    let mut matrix = ResponseMatrix::new(scale.clone());
    for row in reader.records() {
        let row = row.map_err(|e| SimError::Checkpoint(e.to_string()))?;
        let respondent = &row[0];
        for (col, cell) in row.iter().enumerate().skip(1) {
            if cell.is_empty() {
                continue;
            }
            let value: f64 = cell
                .parse()
                .map_err(|_| SimError::Checkpoint(format!("bad cell value {cell:?}")))?;
            matrix.insert(respondent, &headers[col], AnswerValue::from_f64(value, scale)?)?;
        }
    }
    Ok(matrix)
}

/// Write the raw response log as JSONL.
pub fn write_raw_log(path: &Path, records: &[RawRecord]) -> std::io::Result<()> {
    use std::io::Write;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        for rec in records {
            let line = serde_json::to_string(rec)?;
            writeln!(f, "{line}")?;
        }
    }
    std::fs::rename(tmp, path)
}
