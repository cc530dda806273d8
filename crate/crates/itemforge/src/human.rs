//! Human survey ingestion: attention checks (bogus items, duplicate items),
//! clean matrix + demographics export, and bogus-item generation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::IngestError;
use crate::model::{
    AnswerValue, Demographics, LikertScale, ResponseMatrix, SurveyConfig,
};
use crate::providers::{ChatMessage, Provider, ProviderRequest, SamplingSettings};

/// One human respondent's raw export: ordered answers keyed by item and
/// occurrence (duplicate items appear twice), bogus answers kept separate.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSubmission {
    pub respondent_id: String,
    pub demographics: Option<Demographics>,
    /// item_id -> answer of the first occurrence.
    pub first_answers: BTreeMap<String, i32>,
    /// item_id -> answer of the second occurrence (duplicates only).
    pub second_answers: BTreeMap<String, i32>,
    /// Answers to bogus items, in presentation order.
    pub bogus_answers: Vec<i32>,
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionReason {
    BogusCheck,
    DuplicateCheck,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub respondent_id: String,
    pub reasons: Vec<ExclusionReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub recruited: usize,
    pub retained: usize,
    pub excluded: Vec<Exclusion>,
}

/// Duplicate-check threshold: the literal "more than two occasions" reading
/// is the default; AtLeastTwo is the stricter alternative reading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DuplicateThreshold {
    #[default]
    MoreThanTwo,
    AtLeastTwo,
}

/// Pass iff no bogus answer is strictly above the scale midpoint; the
/// midpoint itself passes.
pub fn check_bogus(submission: &RawSubmission, scale: &LikertScale) -> Result<bool, IngestError> {
    if submission.bogus_answers.is_empty() {
        return Err(IngestError::MissingBogus { respondent: submission.respondent_id.clone() });
    }
    let midpoint = (scale.size() as f64 + 1.0) / 2.0;
    Ok(submission.bogus_answers.iter().all(|&a| (a as f64) <= midpoint))
}

/// Per-pair |first - second| deltas; fail when too many pairs differ by 2+
/// points.
pub fn check_duplicates(
    submission: &RawSubmission,
    threshold: DuplicateThreshold,
) -> Result<(bool, Vec<u32>), IngestError> {
    let mut deltas = Vec::with_capacity(submission.second_answers.len());
    for (item_id, &second) in &submission.second_answers {
        let first = submission.first_answers.get(item_id).ok_or_else(|| {
            IngestError::UnpairedDuplicate {
                respondent: submission.respondent_id.clone(),
                item: item_id.clone(),
            }
        })?;
        deltas.push(first.abs_diff(second));
    }
    let occasions = deltas.iter().filter(|&&d| d >= 2).count();
    let pass = match threshold {
        DuplicateThreshold::MoreThanTwo => occasions <= 2,
        DuplicateThreshold::AtLeastTwo => occasions < 2,
    };
    Ok((pass, deltas))
}

#[derive(Debug, Deserialize)]
struct AnswerRow {
    respondent_id: String,
    item_id: String,
    occurrence: u32,
    answer_label: String,
}

#[derive(Debug, Deserialize, Serialize)]
struct DemographicsRow {
    respondent_id: String,
    sex: String,
    age: String,
    country: String,
    occupation: String,
    income: String,
    education: String,
    social_class: String,
    religion: String,
}

/// Item ids beginning with this prefix are treated as bogus items in the
/// long-form export.
pub const BOGUS_PREFIX: &str = "bogus";

/// Parse the long-form answers CSV into per-respondent submissions.
pub fn read_submissions(
    answers_csv: &str,
    demographics_csv: Option<&str>,
    scale: &LikertScale,
) -> Result<Vec<RawSubmission>, IngestError> {
    let mut reader = csv::Reader::from_reader(answers_csv.as_bytes());
    {
        let headers = reader.headers()?;
        let expected = ["respondent_id", "item_id", "occurrence", "answer_label"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(IngestError::Schema(format!(
                "answer columns {got:?}, expected {expected:?}"
            )));
        }
    }
    let mut demographics: BTreeMap<String, Demographics> = BTreeMap::new();
    if let Some(text) = demographics_csv {
        let mut dr = csv::Reader::from_reader(text.as_bytes());
        for row in dr.deserialize::<DemographicsRow>() {
            let row = row?;
            demographics.insert(
                row.respondent_id.clone(),
                Demographics {
                    sex: row.sex,
                    age: row.age,
                    country: row.country,
                    occupation: row.occupation,
                    income: row.income,
                    education: row.education,
                    social_class: row.social_class,
                    religion: row.religion,
                },
            );
        }
    }
    let mut submissions: BTreeMap<String, RawSubmission> = BTreeMap::new();
    let mut any_row = false;
    for row in reader.deserialize::<AnswerRow>() {
        let row = row?;
        any_row = true;
        let value = scale.label_to_value(&row.answer_label)?;
        let sub = submissions.entry(row.respondent_id.clone()).or_insert_with(|| RawSubmission {
            respondent_id: row.respondent_id.clone(),
            demographics: demographics.get(&row.respondent_id).cloned(),
            first_answers: BTreeMap::new(),
            second_answers: BTreeMap::new(),
            bogus_answers: Vec::new(),
            complete: true,
        });
        if row.item_id.starts_with(BOGUS_PREFIX) {
            sub.bogus_answers.push(value);
            continue;
        }
        match row.occurrence {
            1 => {
                sub.first_answers.insert(row.item_id, value);
            }
            2 => {
                sub.second_answers.insert(row.item_id, value);
            }
            other => {
                return Err(IngestError::Schema(format!(
                    "occurrence {other} for item {} (expected 1 or 2)",
                    row.item_id
                )));
            }
        }
    }
    if !any_row {
        return Err(IngestError::EmptyFile);
    }
    Ok(submissions.into_values().collect())
}

#[derive(Debug)]
pub struct IngestOutput {
    pub matrix: ResponseMatrix,
    /// respondent_id -> demographics, retained respondents only.
    pub demographics: BTreeMap<String, Demographics>,
    pub report: ExclusionReport,
}

/// Apply both attention checks and build the clean matrix: first
/// occurrences only, bogus rows dropped, excluded respondents reported
/// with every reason that applies.
pub fn ingest(
    answers_csv: &str,
    demographics_csv: Option<&str>,
    config: &SurveyConfig,
    threshold: DuplicateThreshold,
) -> Result<IngestOutput, IngestError> {
    let submissions = read_submissions(answers_csv, demographics_csv, &config.scale)?;
    let mut matrix = ResponseMatrix::new(config.scale.clone());
    let mut demographics = BTreeMap::new();
    let mut excluded = Vec::new();
    let recruited = submissions.len();
    for sub in &submissions {
        let mut reasons = Vec::new();
        if !sub.complete {
            reasons.push(ExclusionReason::Incomplete);
        }
        if !check_bogus(sub, &config.scale)? {
            reasons.push(ExclusionReason::BogusCheck);
        }
        if !check_duplicates(sub, threshold)?.0 {
            reasons.push(ExclusionReason::DuplicateCheck);
        }
        if !reasons.is_empty() {
            excluded.push(Exclusion { respondent_id: sub.respondent_id.clone(), reasons });
            continue;
        }
        for (item_id, &value) in &sub.first_answers {
            matrix.insert(
                &sub.respondent_id,
                item_id,
                AnswerValue::raw(value, &config.scale)?,
            )?;
        }
        if let Some(d) = &sub.demographics {
            demographics.insert(sub.respondent_id.clone(), d.clone());
        }
    }
    let retained = recruited - excluded.len();
    Ok(IngestOutput { matrix, demographics, report: ExclusionReport { recruited, retained, excluded } })
}

/// Re-export the clean matrix in the long-form input schema, so ingest can
/// be checked for idempotence.
pub fn export_answers_csv(matrix: &ResponseMatrix, scale: &LikertScale) -> String {
    let mut out = String::from("respondent_id,item_id,occurrence,answer_label\n");
    for (respondent, item, value) in matrix.iter() {
        let label = scale
            .value_to_label(value.value() as i32)
            .expect("matrix values are in scale range");
        out.push_str(&format!("{respondent},{item},1,{label}\n"));
    }
    out
}

pub fn export_demographics_csv(demographics: &BTreeMap<String, Demographics>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for (respondent_id, d) in demographics {
        writer
            .serialize(DemographicsRow {
                respondent_id: respondent_id.clone(),
                sex: d.sex.clone(),
                age: d.age.clone(),
                country: d.country.clone(),
                occupation: d.occupation.clone(),
                income: d.income.clone(),
                education: d.education.clone(),
                social_class: d.social_class.clone(),
                religion: d.religion.clone(),
            })
            .expect("serializing demographics row");
    }
    String::from_utf8(writer.into_inner().expect("csv writer")).expect("utf8 csv")
}

fn bogus_prompt(count: usize) -> String {
    format!(
        "Task:\n\
         Create {count} bogus items to detect careless responses in an online survey.\n\n\
         Instructions:\n\
         - Use \"I\" as the subject for {i_count} items and use \"They\" as the subject for \
         {they_count} items.\n\
         - Each item should be unique and not overlap with others.",
        i_count = count - count / 4,
        they_count = count / 4,
    )
}

/// Generate bogus-item texts via the provider. When count = 12 the 9/3
/// subject split is verified.
pub fn generate_bogus_items(
    provider: &dyn Provider,
    model: &str,
    count: usize,
) -> Result<Vec<String>, IngestError> {
    if count == 0 {
        return Err(IngestError::Generation("count must be >= 1".into()));
    }
    let reply = provider
        .chat(&ProviderRequest::chat(
            model,
            vec![ChatMessage::user(bogus_prompt(count))],
            SamplingSettings::default(),
        ))?;
    let items: Vec<String> = reply
        .lines()
        .filter_map(|l| {
            let s = l.trim();
            let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
            if digits == 0 {
                return None;
            }
            s[digits..].strip_prefix(['.', ')']).map(|rest| rest.trim().to_string())
        })
        .filter(|s| !s.is_empty())
        .collect();
    if items.len() != count {
        return Err(IngestError::Generation(format!(
            "expected {count} items, parsed {}",
            items.len()
        )));
    }
    if count == 12 {
        let i_subject = items.iter().filter(|t| t.starts_with("I ") || t.starts_with("I'")).count();
        let they_subject = items.iter().filter(|t| t.starts_with("They ")).count();
        if i_subject != 9 || they_subject != 3 {
            return Err(IngestError::Generation(format!(
                "subject split {i_subject} \"I\" / {they_subject} \"They\", expected 9/3"
            )));
        }
    }
    Ok(items)
}
