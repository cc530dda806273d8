//! Set-level evaluation of selected item sets: mean CV, percentile over all
//! N-item combinations, NDCG, set DV, ICR, and the respondent-subsampling
//! harness. Emits the report as JSON, an aligned text table, and CSV.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::EvalError;
use crate::metrics::{
    cronbach_alpha, item_validities, Correlation, ItemValidity, TraitScoreMode,
};
use crate::model::{ItemSource, ResponseMatrix, SurveyConfig, SurveyItem};

/// Default: enumerate exactly when C(M, N) is at most this many subsets.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 10_000_000;
/// Default Monte-Carlo draw count when enumeration is out of budget.
pub const DEFAULT_MC_DRAWS: u64 = 1_000_000;

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PercentileMode {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileEstimate {
    /// Percentile in [0, 100], mid-rank tie convention.
    pub value: f64,
    pub mode: PercentileMode,
    pub samples: u64,
    pub seed: u64,
}

/// Mean of the selected items' CV scores. Errors if any CV is undefined.
pub fn set_cv(validities: &[&ItemValidity]) -> Result<f64, EvalError> {
    let undefined: Vec<String> = validities
        .iter()
        .filter(|v| !v.cv.is_defined())
        .map(|v| v.item_id.clone())
        .collect();
    if !undefined.is_empty() {
        return Err(EvalError::UndefinedCv(undefined));
    }
    if validities.is_empty() {
        return Err(EvalError::EmptySelection);
    }
    let sum: f64 = validities.iter().map(|v| v.cv.value().unwrap()).sum();
    Ok(sum / validities.len() as f64)
}

fn binomial(m: u64, n: u64) -> Option<u64> {
    if n > m {
        return Some(0);
    }
    let n = n.min(m - n);
    let mut acc: u64 = 1;
    for i in 0..n {
        acc = acc.checked_mul(m - i)?.checked_div(i + 1)?;
    }
    Some(acc)
}

// n! / (k!(n-k)!) without overflow surprises: multiply/divide interleaved.
fn binomial_capped(m: u64, n: u64, cap: u64) -> u64 {
    if n > m {
        return 0;
    }
    let n = n.min(m - n);
    let mut acc: u128 = 1;
    for i in 0..n {
        acc = acc * (m - i) as u128 / (i + 1) as u128;
        if acc > cap as u128 {
            return cap + 1;
        }
    }
    acc as u64
}

/// Percentile of the selected set's mean CV within the distribution of the
/// means of all N-item pool subsets (exact when within budget, otherwise
/// seeded Monte-Carlo). Mid-rank convention: 100 * (below + 0.5*ties) / total.
pub fn percentile(
    selected_cvs: &[f64],
    pool_cvs: &[f64],
    n: usize,
    enumeration_budget: u64,
    mc_draws: u64,
    seed: u64,
) -> Result<PercentileEstimate, EvalError> {
    let m = pool_cvs.len();
    if n > m {
        return Err(EvalError::SelectionTooLarge { n, pool: m });
    }
    if n == 0 || selected_cvs.is_empty() {
        return Err(EvalError::EmptySelection);
    }
    let target = selected_cvs.iter().sum::<f64>() / selected_cvs.len() as f64;
    let total_subsets = binomial_capped(m as u64, n as u64, enumeration_budget);
    if total_subsets <= enumeration_budget {
        let (below, ties, total) = enumerate_subset_means(pool_cvs, n, target);
        Ok(PercentileEstimate {
            value: 100.0 * (below as f64 + 0.5 * ties as f64) / total as f64,
            mode: PercentileMode::Exact,
            samples: total,
            seed,
        })
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut below = 0u64;
        let mut ties = 0u64;
        let mut indices: Vec<usize> = (0..m).collect();
        for _ in 0..mc_draws {
            // partial Fisher-Yates: first n entries become a uniform subset
            for i in 0..n {
                let j = rng.gen_range(i..m);
                indices.swap(i, j);
            }
            let mean = indices[..n].iter().map(|&i| pool_cvs[i]).sum::<f64>() / n as f64;
            if (mean - target).abs() <= TIE_EPS {
                ties += 1;
            } else if mean < target {
                below += 1;
            }
        }
        Ok(PercentileEstimate {
            value: 100.0 * (below as f64 + 0.5 * ties as f64) / mc_draws as f64,
            mode: PercentileMode::MonteCarlo,
            samples: mc_draws,
            seed,
        })
    }
}

/// Count subset means below / tied with `target` over all n-subsets.
fn enumerate_subset_means(pool: &[f64], n: usize, target: f64) -> (u64, u64, u64) {
    let m = pool.len();
    let mut below = 0u64;
    let mut ties = 0u64;
    let mut total = 0u64;
    // iterative combination walk with running sums
    let mut comb: Vec<usize> = (0..n).collect();
    loop {
        let mean = comb.iter().map(|&i| pool[i]).sum::<f64>() / n as f64;
        total += 1;
        if (mean - target).abs() <= TIE_EPS {
            ties += 1;
        } else if mean < target {
            below += 1;
        }
        // advance to next combination
        let mut i = n;
        loop {
            if i == 0 {
                return (below, ties, total);
            }
            i -= 1;
            if comb[i] != i + m - n {
                break;
            }
            if i == 0 {
                return (below, ties, total);
            }
        }
        comb[i] += 1;
        for j in i + 1..n {
            comb[j] = comb[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ndcg {
    pub value: f64,
    /// All gains were zero; the value is defined as 1.0.
    pub degenerate: bool,
}

/// NDCG of a ranking, with ground-truth CVs as relevance. Gains are the CVs
/// shifted by the pool minimum (so negative CVs are handled); discount is
/// log2(position + 1). `ranked_cvs` is the ground-truth CV of each item in
/// the method's rank order, over the full pool.
pub fn ndcg(ranked_cvs: &[f64], cutoff: Option<usize>) -> Ndcg {
    let min = ranked_cvs.iter().copied().fold(f64::INFINITY, f64::min);
    let gains: Vec<f64> = ranked_cvs.iter().map(|&cv| cv - min).collect();
    ndcg_gains(&gains, cutoff)
}

/// NDCG over non-negative gains supplied directly (no shifting).
pub fn ndcg_gains(gains: &[f64], cutoff: Option<usize>) -> Ndcg {
    let k = cutoff.unwrap_or(gains.len()).min(gains.len());
    let mut ideal = gains.to_vec();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let idcg = dcg(&ideal[..k]);
    if idcg == 0.0 {
        return Ndcg { value: 1.0, degenerate: true };
    }
    Ndcg { value: dcg(&gains[..k]) / idcg, degenerate: false }
}

fn dcg(gains: &[f64]) -> f64 {
    gains
        .iter()
        .enumerate()
        .map(|(i, &g)| g / ((i + 2) as f64).log2())
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitEvaluation {
    pub trait_id: String,
    pub cv_score: f64,
    pub percentile: PercentileEstimate,
    pub ndcg_all: f64,
    pub ndcg_at_n: f64,
    pub dv_score: f64,
    pub icr: f64,
    /// Pool items whose ground-truth DV was undefined (excluded from means).
    pub dv_undefined_items: usize,
}

/// Table-2-shaped report: per-trait rows plus unweighted trait averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub method: String,
    pub per_trait: Vec<TraitEvaluation>,
    pub avg_cv_score: f64,
    pub avg_percentile: f64,
    pub avg_ndcg_all: f64,
    pub avg_ndcg_at_n: f64,
    pub avg_dv_score: f64,
    pub avg_icr: f64,
    pub percentile_note: String,
    #[serde(default)]
    pub manifest: Option<String>,
}

/// A method's full pool ranking, per trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRanking {
    pub method: String,
    /// trait_id -> generated-item ids, best first, covering the full pool.
    pub by_trait: BTreeMap<String, Vec<String>>,
}

/// Evaluate a method ranking against a reference (human or oracle) response
/// matrix: ground-truth item validities drive set CV, percentile, NDCG, set
/// DV, and ICR for the method's top-N selection per trait.
pub fn evaluate_selection(
    ranking: &MethodRanking,
    reference_matrix: &ResponseMatrix,
    config: &SurveyConfig,
    all_items: &[SurveyItem],
    mode: TraitScoreMode,
    seed: u64,
) -> Result<SelectionReport, EvalError> {
    evaluate_selection_budgeted(
        ranking,
        reference_matrix,
        config,
        all_items,
        mode,
        seed,
        DEFAULT_ENUMERATION_BUDGET,
        DEFAULT_MC_DRAWS,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_selection_budgeted(
    ranking: &MethodRanking,
    reference_matrix: &ResponseMatrix,
    config: &SurveyConfig,
    all_items: &[SurveyItem],
    mode: TraitScoreMode,
    seed: u64,
    enumeration_budget: u64,
    mc_draws: u64,
) -> Result<SelectionReport, EvalError> {
    let n = config.n_per_trait;
    let mut per_trait = Vec::new();
    for (trait_id, ranked_ids) in &ranking.by_trait {
        let eval = evaluate_trait(
            trait_id,
            ranked_ids,
            reference_matrix,
            config,
            all_items,
            mode,
            n,
            seed,
            enumeration_budget,
            mc_draws,
        )
        .map_err(|e| EvalError::Trait { trait_id: trait_id.clone(), source: Box::new(e) })?;
        per_trait.push(eval);
    }
    if per_trait.is_empty() {
        return Err(EvalError::EmptySelection);
    }
    let k = per_trait.len() as f64;
    Ok(SelectionReport {
        method: ranking.method.clone(),
        avg_cv_score: per_trait.iter().map(|t| t.cv_score).sum::<f64>() / k,
        avg_percentile: per_trait.iter().map(|t| t.percentile.value).sum::<f64>() / k,
        avg_ndcg_all: per_trait.iter().map(|t| t.ndcg_all).sum::<f64>() / k,
        avg_ndcg_at_n: per_trait.iter().map(|t| t.ndcg_at_n).sum::<f64>() / k,
        avg_dv_score: per_trait.iter().map(|t| t.dv_score).sum::<f64>() / k,
        avg_icr: per_trait.iter().map(|t| t.icr).sum::<f64>() / k,
        percentile_note: "mid-rank tie convention; gains shifted by pool minimum for NDCG".into(),
        manifest: None,
        per_trait,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_trait(
    trait_id: &str,
    ranked_ids: &[String],
    reference_matrix: &ResponseMatrix,
    config: &SurveyConfig,
    all_items: &[SurveyItem],
    mode: TraitScoreMode,
    n: usize,
    seed: u64,
    enumeration_budget: u64,
    mc_draws: u64,
) -> Result<TraitEvaluation, EvalError> {
    if n > ranked_ids.len() {
        return Err(EvalError::SelectionTooLarge { n, pool: ranked_ids.len() });
    }
    let pool: Vec<SurveyItem> = ranked_ids
        .iter()
        .map(|id| {
            all_items
                .iter()
                .find(|it| &it.item_id == id)
                .cloned()
                .ok_or_else(|| EvalError::UndefinedCv(vec![id.clone()]))
        })
        .collect::<Result<_, _>>()?;
    let validities =
        item_validities(&pool, reference_matrix, all_items, &config.traits, mode)?;
    let by_id: BTreeMap<&str, &ItemValidity> =
        validities.iter().map(|v| (v.item_id.as_str(), v)).collect();

    let undefined: Vec<String> = validities
        .iter()
        .filter(|v| !v.cv.is_defined())
        .map(|v| v.item_id.clone())
        .collect();
    if !undefined.is_empty() {
        return Err(EvalError::UndefinedCv(undefined));
    }

    let pool_cvs: Vec<f64> = ranked_ids
        .iter()
        .map(|id| by_id[id.as_str()].cv.value().unwrap())
        .collect();
    let selected = &ranked_ids[..n];
    let selected_validities: Vec<&ItemValidity> =
        selected.iter().map(|id| by_id[id.as_str()]).collect();
    let selected_cvs: Vec<f64> = pool_cvs[..n].to_vec();

    let cv_score = set_cv(&selected_validities)?;
    let pct = percentile(&selected_cvs, &pool_cvs, n, enumeration_budget, mc_draws, seed)?;
    let ndcg_all = ndcg(&pool_cvs, None).value;
    let ndcg_at_n = ndcg(&pool_cvs, Some(n)).value;

    let dv_undefined_items =
        selected_validities.iter().filter(|v| !v.dv.is_defined()).count();
    let dv_defined: Vec<f64> =
        selected_validities.iter().filter_map(|v| v.dv.value()).collect();
    let dv_score = if dv_defined.is_empty() {
        0.0
    } else {
        dv_defined.iter().sum::<f64>() / dv_defined.len() as f64
    };

    let selected_items: Vec<&SurveyItem> =
        selected.iter().map(|id| pool.iter().find(|it| &it.item_id == id).unwrap()).collect();
    let icr = cronbach_alpha(&selected_items, reference_matrix)?;

    Ok(TraitEvaluation {
        trait_id: trait_id.to_string(),
        cv_score,
        percentile: pct,
        ndcg_all,
        ndcg_at_n,
        dv_score,
        icr,
        dv_undefined_items,
    })
}

/// Ground-truth ranking of a trait's generated pool by CV on the reference
/// matrix (the "oracle" row's ordering), tie-broken by generation index.
pub fn oracle_ranking(
    reference_matrix: &ResponseMatrix,
    config: &SurveyConfig,
    all_items: &[SurveyItem],
    mode: TraitScoreMode,
) -> Result<MethodRanking, EvalError> {
    let mut by_trait = BTreeMap::new();
    for t in &config.traits {
        let pool: Vec<SurveyItem> = all_items
            .iter()
            .filter(|it| it.trait_id == t.trait_id && it.source == ItemSource::Generated)
            .cloned()
            .collect();
        if pool.is_empty() {
            continue;
        }
        let validities =
            item_validities(&pool, reference_matrix, all_items, &config.traits, mode)?;
        let mut order: Vec<(&SurveyItem, Correlation)> =
            pool.iter().zip(validities.iter().map(|v| v.cv)).collect();
        order.sort_by(|(a, ca), (b, cb)| {
            let ka = ca.value().map(|v| -v);
            let kb = cb.value().map(|v| -v);
            match (ka, kb) {
                (Some(x), Some(y)) => x
                    .partial_cmp(&y)
                    .unwrap()
                    .then(a.generation_index.cmp(&b.generation_index)),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => a.generation_index.cmp(&b.generation_index),
            }
        });
        by_trait.insert(
            t.trait_id.clone(),
            order.into_iter().map(|(it, _)| it.item_id.clone()).collect(),
        );
    }
    Ok(MethodRanking { method: "oracle".into(), by_trait })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleDistribution {
    pub size: usize,
    pub scores: Vec<f64>,
    pub median: f64,
    pub p05: f64,
    pub p95: f64,
}

/// Respondent-subsampling harness: for each size, draw `repeats` seeded
/// subsamples without replacement and rerun the supplied evaluation on each.
pub fn subsample_percentiles<F>(
    respondent_pool: &[String],
    sizes: &[usize],
    repeats: usize,
    seed: u64,
    mut eval_fn: F,
) -> Result<Vec<SubsampleDistribution>, EvalError>
where
    F: FnMut(&[String]) -> Result<f64, EvalError>,
{
    let mut out = Vec::new();
    for (si, &size) in sizes.iter().enumerate() {
        if size > respondent_pool.len() {
            return Err(EvalError::SubsampleTooLarge { size, pool: respondent_pool.len() });
        }
        let mut scores = Vec::with_capacity(repeats);
        for rep in 0..repeats {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ ((si as u64) << 32) ^ rep as u64);
            let mut ids = respondent_pool.to_vec();
            ids.shuffle(&mut rng);
            ids.truncate(size);
            ids.sort_unstable();
            scores.push(eval_fn(&ids)?);
        }
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(SubsampleDistribution {
            size,
            median: quantile(&sorted, 0.5),
            p05: quantile(&sorted, 0.05),
            p95: quantile(&sorted, 0.95),
            scores,
        });
    }
    Ok(out)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Aligned plain-text table mirroring the report columns
/// (Score, Per., NDCG, @N, DV, ICR).
pub fn render_table(reports: &[&SelectionReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}\n",
        "Method", "Score", "Per.", "NDCG", "@N", "DV", "ICR"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<16} {:>7.3} {:>7.1} {:>7.3} {:>7.3} {:>7.3} {:>7.3}\n",
            r.method, r.avg_cv_score, r.avg_percentile, r.avg_ndcg_all, r.avg_ndcg_at_n,
            r.avg_dv_score, r.avg_icr
        ));
    }
    out
}

/// CSV of per-item validities (one row per item) for external plotting.
pub fn validities_csv(validities: &[ItemValidity]) -> String {
    let mut out = String::from("item_id,cv,dv,dv_undefined_traits,n_respondents\n");
    for v in validities {
        let fmt = |c: Correlation| match c {
            Correlation::Defined(x) => format!("{x}"),
            Correlation::Undefined => "undefined".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            v.item_id,
            fmt(v.cv),
            fmt(v.dv),
            v.dv_undefined_traits,
            v.n_respondents
        ));
    }
    out
}

pub fn exact_subset_count(m: usize, n: usize) -> Option<u64> {
    binomial(m as u64, n as u64)
}
