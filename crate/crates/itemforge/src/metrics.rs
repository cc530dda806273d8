//! The statistical kernel: trait scores, Spearman correlation, convergent
//! and discriminant validity, and Cronbach's alpha.
//!
//! All functions are pure and never mutate the response matrix. Reverse
//! coding for negative-polarity items happens here, on the fly; the matrix
//! always holds raw values.

use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::model::{
    ItemSource, LikertScale, Polarity, ResponseMatrix, SurveyItem, TraitSpec,
};

/// A Spearman correlation, or a signal that it is undefined because one of
/// the rank vectors was constant. Undefined is deliberately distinct from
/// 0.0: a constant item is diagnostically different from an uncorrelated one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Correlation {
    Defined(f64),
    Undefined,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Defined(v) => Some(v),
            Correlation::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Correlation::Defined(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitScore {
    pub respondent_id: String,
    pub trait_id: String,
    pub score: f64,
}

/// Per-item validity record: CV against the target trait, DV against the
/// non-target traits, and how many respondents each was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemValidity {
    pub item_id: String,
    pub cv: Correlation,
    pub dv: Correlation,
    /// Non-target traits whose correlation was undefined and therefore
    /// excluded from the DV mean.
    pub dv_undefined_traits: usize,
    pub n_respondents: usize,
}

/// Assign mid-ranks (average rank for ties), 1-based.
fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("non-finite value in rank input"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // positions i..=j share the average of ranks i+1..=j+1
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation::Undefined;
    }
    Correlation::Defined(sxy / (sxx * syy).sqrt())
}

/// Spearman rank-order correlation with mid-rank tie handling: the Pearson
/// correlation of the two rank vectors.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooFewObservations { need: 2, got: x.len() });
    }
    Ok(pearson(&mid_ranks(x), &mid_ranks(y)))
}

/// How official items are pooled when computing a respondent's trait score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraitScoreMode {
    /// All official items of the trait, even when the scored item is itself
    /// official.
    AllOfficial,
    /// Exclude the scored item from its own trait score.
    LeaveOneOut,
}

fn official_items_of<'a>(
    items: &'a [SurveyItem],
    trait_id: &str,
    exclude: Option<&str>,
) -> Vec<&'a SurveyItem> {
    items
        .iter()
        .filter(|it| {
            it.trait_id == trait_id
                && it.source == ItemSource::Official
                && exclude != Some(it.item_id.as_str())
        })
        .collect()
}

/// Mean of the respondent's reverse-coded answers to the trait's official
/// items. Negative-polarity answers are inverted before averaging.
pub fn trait_score(
    respondent_id: &str,
    trait_id: &str,
    matrix: &ResponseMatrix,
    items: &[SurveyItem],
) -> Result<TraitScore, MetricError> {
    trait_score_excluding(respondent_id, trait_id, matrix, items, None)
}

pub fn trait_score_excluding(
    respondent_id: &str,
    trait_id: &str,
    matrix: &ResponseMatrix,
    items: &[SurveyItem],
    exclude_item: Option<&str>,
) -> Result<TraitScore, MetricError> {
    let scale = matrix.scale().clone();
    let official = official_items_of(items, trait_id, exclude_item);
    let mut sum = 0.0;
    let mut n = 0usize;
    for item in official {
        if let Some(ans) = matrix.get(respondent_id, &item.item_id) {
            sum += coded_value(ans.value(), item.polarity, &scale);
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::MissingTraitData {
            respondent: respondent_id.to_string(),
            trait_id: trait_id.to_string(),
        });
    }
    Ok(TraitScore {
        respondent_id: respondent_id.to_string(),
        trait_id: trait_id.to_string(),
        score: sum / n as f64,
    })
}

fn coded_value(raw: f64, polarity: Polarity, scale: &LikertScale) -> f64 {
    match polarity {
        Polarity::Positive => raw,
        Polarity::Negative => (scale.size() as f64 + 1.0) - raw,
    }
}

/// Paired (item answer, trait score) vectors over respondents with complete
/// data for both, in respondent-id order. Item answers are reverse-coded
/// according to the item's polarity.
fn paired_item_trait(
    item: &SurveyItem,
    trait_id: &str,
    matrix: &ResponseMatrix,
    items: &[SurveyItem],
    mode: TraitScoreMode,
) -> (Vec<f64>, Vec<f64>) {
    let exclude = match mode {
        TraitScoreMode::AllOfficial => None,
        TraitScoreMode::LeaveOneOut => Some(item.item_id.as_str()),
    };
    let mut answers = Vec::new();
    let mut scores = Vec::new();
    for r in matrix.respondent_ids() {
        let Some(ans) = matrix.get(r, &item.item_id) else { continue };
        let Ok(ts) = trait_score_excluding(r, trait_id, matrix, items, exclude) else { continue };
        answers.push(coded_value(ans.value(), item.polarity, matrix.scale()));
        scores.push(ts.score);
    }
    (answers, scores)
}

/// Convergent validity: Spearman between the item's (reverse-coded) answers
/// and respondents' trait scores for the item's target trait. Respondents
/// with missing data are dropped pairwise.
pub fn convergent_validity(
    item: &SurveyItem,
    matrix: &ResponseMatrix,
    items: &[SurveyItem],
    mode: TraitScoreMode,
) -> Result<Correlation, MetricError> {
    let (answers, scores) = paired_item_trait(item, &item.trait_id, matrix, items, mode);
    if answers.len() < 3 {
        return Err(MetricError::TooFewObservations { need: 3, got: answers.len() });
    }
    spearman(&answers, &scores)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminantValidity {
    pub dv: Correlation,
    /// Non-target traits excluded because their correlation was undefined.
    pub undefined_traits: usize,
}

/// Discriminant validity: mean absolute Spearman correlation between the
/// item's answers and trait scores of non-target traits. Item answers are
/// NOT reverse-coded here; the absolute value makes polarity irrelevant.
pub fn discriminant_validity(
    item: &SurveyItem,
    matrix: &ResponseMatrix,
    items: &[SurveyItem],
    traits: &[TraitSpec],
) -> Result<DiscriminantValidity, MetricError> {
    let non_target: Vec<&TraitSpec> =
        traits.iter().filter(|t| t.trait_id != item.trait_id).collect();
    if non_target.is_empty() {
        return Err(MetricError::TooFewObservations { need: 1, got: 0 });
    }
    let mut sum = 0.0;
    let mut defined = 0usize;
    let mut undefined = 0usize;
    for t in non_target {
        let (answers, scores) =
            paired_item_trait(item, &t.trait_id, matrix, items, TraitScoreMode::AllOfficial);
        if answers.len() < 2 {
            undefined += 1;
            continue;
        }
        match spearman(&answers, &scores)? {
            Correlation::Defined(rho) => {
                sum += rho.abs();
                defined += 1;
            }
            Correlation::Undefined => undefined += 1,
        }
    }
    let dv = if defined == 0 {
        Correlation::Undefined
    } else {
        Correlation::Defined(sum / defined as f64)
    };
    Ok(DiscriminantValidity { dv, undefined_traits: undefined })
}

/// Cronbach's alpha over an item set: N/(N-1) * (1 - sum(item variances) /
/// variance(row sums)), computed over respondents who answered every item
/// in the set. Negative-polarity answers are reverse-coded first. Population
/// variances are used; the formula is convention-invariant because the
/// (n-1)/n factors cancel in the ratio.
pub fn cronbach_alpha(
    items: &[&SurveyItem],
    matrix: &ResponseMatrix,
) -> Result<f64, MetricError> {
    if items.len() < 2 {
        return Err(MetricError::TooFewObservations { need: 2, got: items.len() });
    }
    let scale = matrix.scale().clone();
    // complete cases only
    let mut rows: Vec<Vec<f64>> = Vec::new();
    'resp: for r in matrix.respondent_ids() {
        let mut row = Vec::with_capacity(items.len());
        for item in items {
            match matrix.get(r, &item.item_id) {
                Some(a) => row.push(coded_value(a.value(), item.polarity, &scale)),
                None => continue 'resp,
            }
        }
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(MetricError::TooFewObservations { need: 2, got: rows.len() });
    }
    let n_items = items.len() as f64;
    let item_var_sum: f64 = (0..items.len())
        .map(|j| population_variance(rows.iter().map(|r| r[j])))
        .sum();
    let row_sums: Vec<f64> = rows.iter().map(|r| r.iter().sum()).collect();
    let total_var = population_variance(row_sums.iter().copied());
    if total_var == 0.0 {
        return Err(MetricError::DegenerateVariance);
    }
    Ok(n_items / (n_items - 1.0) * (1.0 - item_var_sum / total_var))
}

fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Compute CV and DV for every item in `pool` against `matrix`, reporting
/// undefined correlations as such rather than failing the batch.
pub fn item_validities(
    pool: &[SurveyItem],
    matrix: &ResponseMatrix,
    items: &[SurveyItem],
    traits: &[TraitSpec],
    mode: TraitScoreMode,
) -> Result<Vec<ItemValidity>, MetricError> {
    pool.iter()
        .map(|item| {
            let (answers, _) =
                paired_item_trait(item, &item.trait_id, matrix, items, TraitScoreMode::AllOfficial);
            let cv = convergent_validity(item, matrix, items, mode)?;
            let d = discriminant_validity(item, matrix, items, traits)?;
            Ok(ItemValidity {
                item_id: item.item_id.clone(),
                cv,
                dv: d.dv,
                dv_undefined_traits: d.undefined_traits,
                n_respondents: answers.len(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnswerValue, ItemSource, LikertScale, Polarity};

    fn scale(l: usize) -> LikertScale {
        LikertScale::new((0..l).map(|i| format!("pt{}", l - i)).collect()).unwrap()
    }

    fn item(id: &str, trait_id: &str, polarity: Polarity, source: ItemSource, gi: u32) -> SurveyItem {
        SurveyItem {
            item_id: id.into(),
            trait_id: trait_id.into(),
            text: format!("I am {id}."),
            polarity,
            source,
            generator: "test".into(),
            generation_index: gi,
        }
    }

    fn fill(matrix: &mut ResponseMatrix, item_id: &str, answers: &[i32]) {
        let s = matrix.scale().clone();
        for (i, &a) in answers.iter().enumerate() {
            matrix.insert(&format!("r{i:02}"), item_id, AnswerValue::raw(a, &s).unwrap()).unwrap();
        }
    }

    #[test]
    fn spearman_monotone_is_one() {
        let r = spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r, Correlation::Defined(1.0));
    }

    #[test]
    fn spearman_derived_point_six() {
        // oracle: rank-then-Pearson by hand, 1 - 6*4/60
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        let v = r.value().unwrap();
        assert!((v - 0.6).abs() < 1e-12, "{v}");
    }

    #[test]
    fn spearman_tie_handling() {
        // oracle: mid-rank Pearson brute force -> sqrt(3)/2
        let r = spearman(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        let v = r.value().unwrap();
        assert!((v - 0.8660).abs() < 1e-4, "{v}");
    }

    #[test]
    fn spearman_constant_is_undefined() {
        let r = spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r, Correlation::Undefined);
    }

    #[test]
    fn spearman_length_mismatch() {
        assert!(matches!(
            spearman(&[1.0], &[1.0, 2.0]),
            Err(MetricError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn trait_score_examples() {
        let s = scale(5);
        let items = vec![
            item("p1", "t", Polarity::Positive, ItemSource::Official, 1),
            item("p2", "t", Polarity::Positive, ItemSource::Official, 2),
            item("n1", "t", Polarity::Negative, ItemSource::Official, 3),
        ];
        let mut m = ResponseMatrix::new(s.clone());
        m.insert("r", "p1", AnswerValue::raw(5, &s).unwrap()).unwrap();
        m.insert("r", "p2", AnswerValue::raw(3, &s).unwrap()).unwrap();
        m.insert("r", "n1", AnswerValue::raw(2, &s).unwrap()).unwrap();
        let ts = trait_score("r", "t", &m, &items).unwrap();
        assert_eq!(ts.score, 4.0); // (5+3+4)/3

        // single positive item answered 6 on a 6-point scale
        let s6 = scale(6);
        let items6 = vec![item("p", "t", Polarity::Positive, ItemSource::Official, 1)];
        let mut m6 = ResponseMatrix::new(s6.clone());
        m6.insert("r", "p", AnswerValue::raw(6, &s6).unwrap()).unwrap();
        assert_eq!(trait_score("r", "t", &m6, &items6).unwrap().score, 6.0);

        // two negative items answered 1 -> both reverse to 5
        let items_n = vec![
            item("n1", "t", Polarity::Negative, ItemSource::Official, 1),
            item("n2", "t", Polarity::Negative, ItemSource::Official, 2),
        ];
        let mut mn = ResponseMatrix::new(s.clone());
        mn.insert("r", "n1", AnswerValue::raw(1, &s).unwrap()).unwrap();
        mn.insert("r", "n2", AnswerValue::raw(1, &s).unwrap()).unwrap();
        assert_eq!(trait_score("r", "t", &mn, &items_n).unwrap().score, 5.0);
    }

    #[test]
    fn trait_score_missing_data_errors() {
        let m = ResponseMatrix::new(scale(5));
        let items = vec![item("p", "t", Polarity::Positive, ItemSource::Official, 1)];
        assert!(matches!(
            trait_score("r", "t", &m, &items),
            Err(MetricError::MissingTraitData { .. })
        ));
    }

    /// Items + matrix where the official item pins trait scores to a known
    /// order and the probe item's answers are given directly.
    fn cv_fixture(probe_polarity: Polarity, probe: &[i32], official: &[i32]) -> (SurveyItem, Vec<SurveyItem>, ResponseMatrix) {
        let s = scale(5);
        let off = item("off", "t", Polarity::Positive, ItemSource::Official, 0);
        let probe_item = item("probe", "t", probe_polarity, ItemSource::Generated, 1);
        let mut m = ResponseMatrix::new(s);
        fill(&mut m, "off", official);
        fill(&mut m, "probe", probe);
        (probe_item.clone(), vec![off, probe_item], m)
    }

    #[test]
    fn cv_perfect_rank_agreement() {
        let (probe, items, m) = cv_fixture(Polarity::Positive, &[1, 2, 3, 4, 5], &[1, 2, 3, 4, 5]);
        let cv = convergent_validity(&probe, &m, &items, TraitScoreMode::AllOfficial).unwrap();
        assert_eq!(cv, Correlation::Defined(1.0));
    }

    #[test]
    fn cv_negative_polarity_reverse_restores_agreement() {
        // raw answers are (L+1) - trait-score order; reverse coding restores it
        let (probe, items, m) = cv_fixture(Polarity::Negative, &[5, 4, 3, 2, 1], &[1, 2, 3, 4, 5]);
        let cv = convergent_validity(&probe, &m, &items, TraitScoreMode::AllOfficial).unwrap();
        assert_eq!(cv, Correlation::Defined(1.0));
    }

    #[test]
    fn cv_derived_point_six() {
        let (probe, items, m) = cv_fixture(Polarity::Positive, &[1, 2, 3, 4], &[2, 1, 4, 3]);
        let cv = convergent_validity(&probe, &m, &items, TraitScoreMode::AllOfficial).unwrap();
        assert!((cv.value().unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn cv_constant_answers_undefined() {
        let (probe, items, m) = cv_fixture(Polarity::Positive, &[3, 3, 3, 3], &[1, 2, 3, 4]);
        let cv = convergent_validity(&probe, &m, &items, TraitScoreMode::AllOfficial).unwrap();
        assert_eq!(cv, Correlation::Undefined);
    }

    #[test]
    fn cv_too_few_respondents_errors() {
        let (probe, items, m) = cv_fixture(Polarity::Positive, &[1, 2], &[1, 2]);
        assert!(matches!(
            convergent_validity(&probe, &m, &items, TraitScoreMode::AllOfficial),
            Err(MetricError::TooFewObservations { need: 3, .. })
        ));
    }

    #[test]
    fn dv_absolute_values_before_mean() {
        // two non-target traits with rho = +0.6 and -0.6 -> 0.6
        let s = scale(5);
        let items = vec![
            item("off_a", "a", Polarity::Positive, ItemSource::Official, 0),
            item("off_b", "b", Polarity::Positive, ItemSource::Official, 0),
            item("probe", "t", Polarity::Positive, ItemSource::Generated, 1),
        ];
        let traits: Vec<TraitSpec> = ["t", "a", "b"]
            .iter()
            .map(|id| TraitSpec {
                trait_id: id.to_string(),
                name: id.to_string(),
                definition: "d".into(),
                theory: crate::model::TheoryTag::Custom,
                official_item_ids: vec![],
            })
            .collect();
        let mut m = ResponseMatrix::new(s);
        fill(&mut m, "probe", &[1, 2, 3, 4]);
        fill(&mut m, "off_a", &[2, 1, 4, 3]); // rho = +0.6
        fill(&mut m, "off_b", &[4, 5, 2, 3]); // rho = -0.6
        let probe = items[2].clone();
        let d = discriminant_validity(&probe, &m, &items, &traits).unwrap();
        assert!((d.dv.value().unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(d.undefined_traits, 0);
    }

    #[test]
    fn dv_single_non_target_derived() {
        let s = scale(5);
        let items = vec![
            item("off_a", "a", Polarity::Positive, ItemSource::Official, 0),
            item("probe", "t", Polarity::Positive, ItemSource::Generated, 1),
        ];
        let traits: Vec<TraitSpec> = ["t", "a"]
            .iter()
            .map(|id| TraitSpec {
                trait_id: id.to_string(),
                name: id.to_string(),
                definition: "d".into(),
                theory: crate::model::TheoryTag::Custom,
                official_item_ids: vec![],
            })
            .collect();
        let mut m = ResponseMatrix::new(s);
        fill(&mut m, "probe", &[1, 2, 3, 4]);
        fill(&mut m, "off_a", &[2, 1, 4, 3]);
        let d = discriminant_validity(&items[1], &m, &items, &traits).unwrap();
        assert!((d.dv.value().unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn alpha_homogeneous_set_is_one() {
        let s = scale(5);
        let its: Vec<SurveyItem> = (0..3)
            .map(|i| item(&format!("i{i}"), "t", Polarity::Positive, ItemSource::Generated, i))
            .collect();
        let mut m = ResponseMatrix::new(s);
        for it in &its {
            fill(&mut m, &it.item_id, &[1, 2, 3]);
        }
        let refs: Vec<&SurveyItem> = its.iter().collect();
        let a = cronbach_alpha(&refs, &m).unwrap();
        assert!((a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_derived_negative_two() {
        // items [1,2,3] and [3,1,2]: variances 2/3 each, row-sum variance 2/3
        let s = scale(5);
        let its = vec![
            item("i0", "t", Polarity::Positive, ItemSource::Generated, 0),
            item("i1", "t", Polarity::Positive, ItemSource::Generated, 1),
        ];
        let mut m = ResponseMatrix::new(s);
        fill(&mut m, "i0", &[1, 2, 3]);
        fill(&mut m, "i1", &[3, 1, 2]);
        let refs: Vec<&SurveyItem> = its.iter().collect();
        let a = cronbach_alpha(&refs, &m).unwrap();
        assert!((a - (-2.0)).abs() < 1e-12, "{a}");
    }

    #[test]
    fn alpha_constant_row_sums_degenerate() {
        let s = scale(5);
        let its = vec![
            item("i0", "t", Polarity::Positive, ItemSource::Generated, 0),
            item("i1", "t", Polarity::Positive, ItemSource::Generated, 1),
        ];
        let mut m = ResponseMatrix::new(s);
        fill(&mut m, "i0", &[1, 2]);
        fill(&mut m, "i1", &[2, 1]);
        let refs: Vec<&SurveyItem> = its.iter().collect();
        assert!(matches!(cronbach_alpha(&refs, &m), Err(MetricError::DegenerateVariance)));
    }

    #[test]
    fn spearman_invariant_under_monotone_transform() {
        let x = [3.0, 1.0, 4.0, 1.5, 5.0];
        let y = [2.0, 7.0, 1.0, 8.0, 2.5];
        let base = spearman(&x, &y).unwrap().value().unwrap();
        let tx: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let ty: Vec<f64> = y.iter().map(|v| 3.0 * v + 10.0).collect();
        let t = spearman(&tx, &ty).unwrap().value().unwrap();
        assert!((base - t).abs() < 1e-12);
    }
}
