//! Generated item pool construction: item-generation prompt assembly,
//! response parsing, embedding, k-means clustering, and nearest-to-centroid
//! refinement that deduplicates the candidate pool.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PoolError;
use crate::model::{ItemSource, Polarity, SurveyItem, TraitSpec};
use crate::providers::Provider;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub trait_spec: TraitSpec,
    pub direction: Polarity,
    /// Items requested per call: twice the official count per direction.
    pub count: usize,
    pub subject: String,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedItem {
    pub item_id: String,
    pub vector: Vec<f64>,
    pub norm: f64,
}

/// Item-generation prompt: trait definition, do-not-restate rule, subject
/// rule, exact count, correlation direction, and the uniqueness rule.
pub fn build_item_prompt(req: &GenerationRequest) -> Result<String, PoolError> {
    if req.trait_spec.definition.trim().is_empty() {
        return Err(PoolError::MissingDefinition(req.trait_spec.trait_id.clone()));
    }
    let direction = match req.direction {
        Polarity::Positive => "positively correlated with",
        Polarity::Negative => "negatively correlated with",
    };
    Ok(format!(
        "Trait: {name}\n\
         Definition: {definition}\n\
         Grammatical Subject: {subject}\n\
         Number of Items: {count}\n\
         Correlation Direction: {direction} {name}\n\
         \n\
         Generate survey items measuring the trait above.\n\
         Instructions:\n\
         - Do not use the exact trait definition within any item.\n\
         - Each item must begin with the grammatical subject \"{subject}\".\n\
         - Generate exactly {count} items.\n\
         - Each item must be {direction} the trait.\n\
         - Each item must be semantically unique and not overlap with the others.\n\
         Number each item without detailed explanation.",
        name = req.trait_spec.name,
        definition = req.trait_spec.definition,
        subject = req.subject,
        count = req.count,
    ))
}

/// Lines dropped while parsing a generation response, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub dropped: Vec<String>,
}

/// Strip a leading list marker ("12.", "3)", "-", "*") from a line.
fn strip_marker(line: &str) -> &str {
    let s = line.trim();
    let s = s.strip_prefix(['-', '*']).map(str::trim_start).unwrap_or(s);
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(r) = rest.strip_prefix(['.', ')']) {
            return r.trim();
        }
    }
    s
}

/// Parse a numbered-list generation response into items. Lines that do not
/// start with the required subject are dropped and reported. Generation
/// indices are assigned sequentially in encounter order starting at
/// `start_index`.
pub fn parse_item_list(
    llm_text: &str,
    req: &GenerationRequest,
    start_index: u32,
) -> Result<(Vec<SurveyItem>, ParseReport), PoolError> {
    let mut items = Vec::new();
    let mut dropped = Vec::new();
    let mut index = start_index;
    for line in llm_text.lines() {
        let text = strip_marker(line);
        if text.is_empty() {
            continue;
        }
        let starts_with_subject = text
            .strip_prefix(&req.subject)
            .map(|rest| rest.starts_with([' ', '\'']) || rest.is_empty())
            .unwrap_or(false);
        if !starts_with_subject {
            dropped.push(text.to_string());
            continue;
        }
        items.push(SurveyItem {
            item_id: format!(
                "{}-{}-{}-{index}",
                req.trait_spec.trait_id,
                req.generator,
                match req.direction {
                    Polarity::Positive => "pos",
                    Polarity::Negative => "neg",
                }
            ),
            trait_id: req.trait_spec.trait_id.clone(),
            text: text.to_string(),
            polarity: req.direction,
            source: ItemSource::Generated,
            generator: req.generator.clone(),
            generation_index: index,
        });
        index += 1;
    }
    if items.is_empty() {
        return Err(PoolError::GenerationFailure);
    }
    Ok((items, ParseReport { dropped }))
}

/// Generate one direction's candidate items via the provider.
pub fn generate_items(
    req: &GenerationRequest,
    provider: &dyn Provider,
    model: &str,
    start_index: u32,
) -> Result<(Vec<SurveyItem>, ParseReport), PoolError> {
    let prompt = build_item_prompt(req)?;
    let text = provider.chat(&crate::providers::ProviderRequest::chat(
        model,
        vec![crate::providers::ChatMessage::user(prompt)],
        crate::providers::SamplingSettings::default(),
    ))?;
    parse_item_list(&text, req, start_index)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// L2-normalize a vector; errors on zero norm.
pub fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return None;
    }
    Some(v.iter().map(|x| x / norm).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
}

/// Lloyd's algorithm with seeded k-means++ initialization. Converges when
/// assignments stabilize or `max_iters` is reached; an empty cluster is
/// re-seeded from the point farthest from its centroid.
pub fn kmeans(
    vectors: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KmeansResult, PoolError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(PoolError::KTooLarge { k, n });
    }
    let dim = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != dim) {
        return Err(PoolError::DimensionMismatch(dim, bad.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(vectors[rng.gen_range(0..n)].clone());
    let mut min_dists: Vec<f64> = vectors.iter().map(|v| sq_dist(v, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = min_dists.iter().sum();
        let next = if total == 0.0 {
            // all points coincide with existing centroids; pick any
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in min_dists.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        };
        centroids.push(vectors[next].clone());
        for (i, v) in vectors.iter().enumerate() {
            let d = sq_dist(v, centroids.last().unwrap());
            if d < min_dists[i] {
                min_dists[i] = d;
            }
        }
    }

    let mut assignments = vec![0usize; n];
    let mut inertia = f64::INFINITY;
    let mut iterations = 0;
    for iter in 0..max_iters.max(1) {
        iterations = iter + 1;
        // assign
        let mut changed = false;
        let mut new_inertia = 0.0;
        for (i, v) in vectors.iter().enumerate() {
            let (best, d) = centroids
                .iter()
                .enumerate()
                .map(|(c, cent)| (c, sq_dist(v, cent)))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                .unwrap();
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
            new_inertia += d;
        }
        debug_assert!(
            new_inertia <= inertia + 1e-9,
            "inertia increased: {inertia} -> {new_inertia}"
        );
        inertia = new_inertia;
        if !changed && iter > 0 {
            break;
        }
        // update
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, v) in vectors.iter().enumerate() {
            counts[assignments[i]] += 1;
            for (s, x) in sums[assignments[i]].iter_mut().zip(v) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed from the point farthest from its current centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&vectors[a], &centroids[assignments[a]])
                            .partial_cmp(&sq_dist(&vectors[b], &centroids[assignments[b]]))
                            .unwrap()
                    })
                    .unwrap();
                centroids[c] = vectors[far].clone();
                inertia = f64::INFINITY;
            } else {
                for (j, s) in sums[c].iter().enumerate() {
                    centroids[c][j] = s / counts[c] as f64;
                }
            }
        }
    }
    // final assignment pass so assignments match returned centroids
    let mut final_inertia = 0.0;
    for (i, v) in vectors.iter().enumerate() {
        let (best, d) = centroids
            .iter()
            .enumerate()
            .map(|(c, cent)| (c, sq_dist(v, cent)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
            .unwrap();
        assignments[i] = best;
        final_inertia += d;
    }
    Ok(KmeansResult { assignments, centroids, inertia: final_inertia, iterations })
}

/// Cluster count per the "roughly n/4" reduction: nearest integer, at least 1.
pub fn refinement_k(candidates: usize) -> usize {
    ((candidates as f64 / 4.0).round() as usize).max(1)
}

/// Reduce a candidate pool to k representatives: cluster the (normalized)
/// embeddings and keep, per cluster, the item nearest its centroid. Distance
/// ties break toward the lowest generation index; output is sorted by
/// generation index.
pub fn refine_pool(
    items: &[SurveyItem],
    embeddings: &[EmbeddedItem],
    k: usize,
    seed: u64,
) -> Result<Vec<SurveyItem>, PoolError> {
    if items.len() != embeddings.len() {
        return Err(PoolError::EmbeddingMismatch {
            items: items.len(),
            embeddings: embeddings.len(),
        });
    }
    let mut vectors = Vec::with_capacity(items.len());
    for (item, emb) in items.iter().zip(embeddings) {
        let v = normalize(&emb.vector).ok_or_else(|| PoolError::ZeroNorm(item.item_id.clone()))?;
        vectors.push(v);
    }
    let result = kmeans(&vectors, k, seed, 100)?;
    let mut refined: Vec<SurveyItem> = Vec::with_capacity(k);
    for c in 0..k {
        let representative = (0..items.len())
            .filter(|&i| result.assignments[i] == c)
            .min_by(|&a, &b| {
                sq_dist(&vectors[a], &result.centroids[c])
                    .partial_cmp(&sq_dist(&vectors[b], &result.centroids[c]))
                    .unwrap()
                    .then(items[a].generation_index.cmp(&items[b].generation_index))
            });
        if let Some(i) = representative {
            refined.push(items[i].clone());
        }
    }
    refined.sort_by_key(|it| it.generation_index);
    if refined.len() != k {
        // empty clusters should have been re-seeded; treat as a logic error
        return Err(PoolError::KTooLarge { k, n: refined.len() });
    }
    Ok(refined)
}

/// Embed all items with per-text provider caching.
pub fn embed_items(
    items: &[SurveyItem],
    provider: &dyn Provider,
    model: &str,
) -> Result<Vec<EmbeddedItem>, PoolError> {
    let texts: Vec<String> = items.iter().map(|it| it.text.clone()).collect();
    let vectors = provider.embed(&texts, model)?;
    items
        .iter()
        .zip(vectors)
        .map(|(it, v)| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(PoolError::ZeroNorm(it.item_id.clone()));
            }
            Ok(EmbeddedItem { item_id: it.item_id.clone(), vector: v, norm })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TheoryTag;

    fn trait_spec(definition: &str) -> TraitSpec {
        TraitSpec {
            trait_id: "conscientiousness".into(),
            name: "Conscientiousness".into(),
            definition: definition.into(),
            theory: TheoryTag::Big5,
            official_item_ids: vec![],
        }
    }

    fn req(direction: Polarity, count: usize) -> GenerationRequest {
        GenerationRequest {
            trait_spec: trait_spec("A tendency to be organized and dependable."),
            direction,
            count,
            subject: "I".into(),
            generator: "gpt-test".into(),
        }
    }

    #[test]
    fn prompt_contains_all_five_fields() {
        let p = build_item_prompt(&req(Polarity::Positive, 20)).unwrap();
        assert!(p.contains("A tendency to be organized and dependable."));
        assert!(p.contains("Do not use the exact trait definition"));
        assert!(p.contains("must begin with the grammatical subject \"I\""));
        assert!(p.contains("exactly 20 items"));
        assert!(p.contains("positively correlated with Conscientiousness"));
        assert!(p.contains("semantically unique"));
    }

    #[test]
    fn prompt_negative_direction() {
        let p = build_item_prompt(&req(Polarity::Negative, 10)).unwrap();
        assert!(p.contains("negatively correlated with"));
    }

    #[test]
    fn prompt_missing_definition_errors() {
        let mut r = req(Polarity::Positive, 10);
        r.trait_spec.definition = "  ".into();
        assert!(matches!(build_item_prompt(&r), Err(PoolError::MissingDefinition(_))));
    }

    #[test]
    fn parse_numbered_list() {
        let (items, report) =
            parse_item_list("1. I plan ahead.\n2. I keep lists.", &req(Polarity::Positive, 2), 1)
                .unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].text, "I plan ahead.");
        assert_eq!(items[0].generation_index, 1);
        assert_eq!(items[1].generation_index, 2);
        assert!(report.dropped.is_empty());
    }

    #[test]
    fn parse_drops_wrong_subject() {
        let (items, report) = parse_item_list(
            "1. I plan ahead.\n2. They plan ahead.",
            &req(Polarity::Positive, 2),
            1,
        )
        .unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(report.dropped, vec!["They plan ahead.".to_string()]);
    }

    #[test]
    fn parse_subject_must_be_whole_word() {
        // "It" must not count as subject "I"
        let (items, report) = parse_item_list(
            "1. It rains.\n2. I'm organized.",
            &req(Polarity::Positive, 2),
            1,
        )
        .unwrap();
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].text, "I'm organized.");
        assert_eq!(report.dropped.len(), 1);
    }

    #[test]
    fn parse_empty_is_generation_failure() {
        assert!(matches!(
            parse_item_list("", &req(Polarity::Positive, 2), 1),
            Err(PoolError::GenerationFailure)
        ));
    }

    fn unit_items(n: usize) -> Vec<SurveyItem> {
        (0..n)
            .map(|i| SurveyItem {
                item_id: format!("i{i}"),
                trait_id: "t".into(),
                text: format!("I am item {i}."),
                polarity: Polarity::Positive,
                source: ItemSource::Generated,
                generator: "g".into(),
                generation_index: i as u32 + 1,
            })
            .collect()
    }

    #[test]
    fn kmeans_degenerate_k_equals_n() {
        let vecs: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64, 0.0]).collect();
        let r = kmeans(&vecs, 4, 0, 50).unwrap();
        let mut clusters: Vec<usize> = r.assignments.clone();
        clusters.sort_unstable();
        clusters.dedup();
        assert_eq!(clusters.len(), 4);
        assert!(r.inertia < 1e-12);
    }

    #[test]
    fn kmeans_k_one_is_mean() {
        let vecs = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        let r = kmeans(&vecs, 1, 0, 50).unwrap();
        assert_eq!(r.centroids[0], vec![1.0, 1.0]);
    }

    #[test]
    fn kmeans_two_well_separated_clusters() {
        // oracle: exhaustive 2-partition inertia minimization puts
        // {(0,0),(0,1)} and {(10,10),(10,11)} together
        let vecs = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![10.0, 10.0],
            vec![10.0, 11.0],
        ];
        for seed in 0..10 {
            let r = kmeans(&vecs, 2, seed, 50).unwrap();
            assert_eq!(r.assignments[0], r.assignments[1]);
            assert_eq!(r.assignments[2], r.assignments[3]);
            assert_ne!(r.assignments[0], r.assignments[2]);
        }
    }

    #[test]
    fn kmeans_k_too_large() {
        let vecs = vec![vec![0.0]];
        assert!(matches!(kmeans(&vecs, 2, 0, 10), Err(PoolError::KTooLarge { .. })));
    }

    #[test]
    fn refine_pool_k_equals_n_keeps_everything() {
        let items = unit_items(3);
        let embeddings: Vec<EmbeddedItem> = (0..3)
            .map(|i| EmbeddedItem {
                item_id: format!("i{i}"),
                vector: vec![if i == 0 { 1.0 } else { 0.0 }, if i == 1 { 1.0 } else { 0.0 }, if i == 2 { 1.0 } else { 0.0 }],
                norm: 1.0,
            })
            .collect();
        let refined = refine_pool(&items, &embeddings, 3, 0).unwrap();
        assert_eq!(refined, items);
    }

    #[test]
    fn refine_pool_tie_breaks_by_generation_index() {
        // two equidistant members per cluster -> lower generation index wins
        let items = unit_items(4);
        let vecs = [
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![0.0, -1.0],
            vec![-1.0, 0.0],
        ];
        // clusters {0,1} and {2,3}: within each, both members are equidistant
        // from the centroid after normalization
        let embeddings: Vec<EmbeddedItem> = items
            .iter()
            .zip(vecs.iter())
            .map(|(it, v)| EmbeddedItem { item_id: it.item_id.clone(), vector: v.clone(), norm: 1.0 })
            .collect();
        let refined = refine_pool(&items, &embeddings, 2, 3).unwrap();
        assert_eq!(refined.len(), 2);
        // each representative is the lowest-gen_index member of its cluster
        let ids: Vec<&str> = refined.iter().map(|i| i.item_id.as_str()).collect();
        for id in &ids {
            assert!(["i0", "i1", "i2", "i3"].contains(id));
        }
        // deterministic for a fixed seed
        let again = refine_pool(&items, &embeddings, 2, 3).unwrap();
        assert_eq!(refined, again);
    }

    #[test]
    fn refine_pool_duplicates_collapse() {
        let items = unit_items(4);
        let embeddings: Vec<EmbeddedItem> = items
            .iter()
            .enumerate()
            .map(|(i, it)| EmbeddedItem {
                item_id: it.item_id.clone(),
                // i0 and i1 identical; i2 and i3 identical
                vector: if i < 2 { vec![1.0, 0.0] } else { vec![0.0, 1.0] },
                norm: 1.0,
            })
            .collect();
        let refined = refine_pool(&items, &embeddings, 2, 0).unwrap();
        assert_eq!(refined.len(), 2);
        assert_eq!(refined[0].item_id, "i0");
        assert_eq!(refined[1].item_id, "i2");
    }

    #[test]
    fn refine_pool_mismatched_embeddings_error() {
        let items = unit_items(3);
        assert!(matches!(
            refine_pool(&items, &[], 1, 0),
            Err(PoolError::EmbeddingMismatch { .. })
        ));
    }

    #[test]
    fn refinement_k_rounding() {
        assert_eq!(refinement_k(40), 10);
        assert_eq!(refinement_k(16), 4);
        assert_eq!(refinement_k(2), 1);
        assert_eq!(refinement_k(6), 2);
    }

    #[test]
    fn normalized_euclid_agrees_with_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let u: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (v, w, u) =
                (normalize(&v).unwrap(), normalize(&w).unwrap(), normalize(&u).unwrap());
            let cos = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            let closer_euclid = sq_dist(&v, &w) < sq_dist(&v, &u);
            let closer_cosine = cos(&v, &w) > cos(&v, &u);
            assert_eq!(closer_euclid, closer_cosine);
        }
    }
}
