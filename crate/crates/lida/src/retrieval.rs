//! Query-time attribution and zero-shot detection.
//!
//! Attribution is an exhaustive exact nearest-neighbor search: the query
//! fingerprint is encoded and ranked against every registered exemplar by
//! cosine similarity. No approximate index — registries hold a few exemplars
//! per generator, so brute force is both exact and fast. Detection compares
//! the query against the real prototype and thresholds the similarity.

use rayon::prelude::*;

use crate::encoder::{cosine_similarity, EncoderParams, FeatureVector};
use crate::error::{Error, Result};
use crate::fingerprint::FingerprintImage;
use crate::losses::{RealPrototype, REAL_LABEL};
use crate::registry::Registry;

/// Similarity at or above which a query counts as real.
pub const DEFAULT_THRESHOLD: f64 = 0.85;

/// How many neighbors attribution reports by default.
pub const DEFAULT_TOP_K: usize = 5;

/// One retrieved neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub id: u64,
    pub label: String,
    pub similarity: f64,
}

/// Neighbors ordered by similarity (descending), ties broken by ascending
/// exemplar id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub entries: Vec<RankedEntry>,
}

impl RankedResult {
    /// Label of the rank-1 neighbor.
    pub fn top_label(&self) -> Option<&str> {
        self.entries.first().map(|e| e.label.as_str())
    }

    /// Predicted label: rank-1 by default, or the majority label over all
    /// returned neighbors when `vote` is set. Vote ties go to the tied
    /// label whose best neighbor ranks first.
    pub fn predicted_label(&self, vote: bool) -> Option<&str> {
        if !vote {
            return self.top_label();
        }
        let mut counts: Vec<(&str, usize, usize)> = Vec::new(); // (label, count, best rank)
        for (rank, e) in self.entries.iter().enumerate() {
            match counts.iter_mut().find(|(l, _, _)| *l == e.label) {
                Some(entry) => entry.1 += 1,
                None => counts.push((e.label.as_str(), 1, rank)),
            }
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
            .map(|(label, _, _)| label)
    }
}

/// Outcome of thresholding prototype similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionVerdict {
    /// True exactly when `similarity >= threshold`.
    pub is_real: bool,
    pub similarity: f64,
    pub threshold: f64,
}

/// Rank every registry record against an already-encoded query feature.
pub fn attribute_feature(
    query: &FeatureVector,
    registry: &Registry,
    k: usize,
) -> Result<RankedResult> {
    rank_records(query, registry, k, false)
}

/// Encode a query fingerprint and rank it against the registry.
pub fn attribute(
    fp: &FingerprintImage,
    registry: &Registry,
    params: &EncoderParams,
    k: usize,
) -> Result<RankedResult> {
    check_encoder(registry, params)?;
    attribute_feature(&params.embed(fp)?, registry, k)
}

/// Attribute many queries at once. Parallel across queries; results are in
/// input order and identical for any thread count.
pub fn attribute_batch(
    fps: &[FingerprintImage],
    registry: &Registry,
    params: &EncoderParams,
    k: usize,
) -> Result<Vec<RankedResult>> {
    check_encoder(registry, params)?;
    fps.par_iter()
        .map(|fp| attribute_feature(&params.embed(fp)?, registry, k))
        .collect()
}

/// Real-vs-fake verdict for an already-encoded query feature.
pub fn detect_feature(
    query: &FeatureVector,
    prototype: &RealPrototype,
    threshold: f64,
) -> Result<DetectionVerdict> {
    if !threshold.is_finite() || !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in [-1, 1], got {threshold}"
        )));
    }
    let similarity = cosine_similarity(query, &prototype.values);
    Ok(DetectionVerdict { is_real: similarity >= threshold, similarity, threshold })
}

/// Encode a query fingerprint and threshold its prototype similarity.
pub fn detect(
    fp: &FingerprintImage,
    prototype: &RealPrototype,
    params: &EncoderParams,
    threshold: f64,
) -> Result<DetectionVerdict> {
    if prototype.dim() != params.config.feature_dim {
        return Err(Error::IncompatibleEncoder(format!(
            "prototype dim {} vs encoder feature dim {}",
            prototype.dim(),
            params.config.feature_dim
        )));
    }
    detect_feature(&params.embed(fp)?, prototype, threshold)
}

/// Result of detection followed by attribution.
#[derive(Debug, Clone, PartialEq)]
pub enum TwoStageOutcome {
    /// Detection said real; the registry was never consulted.
    Real(DetectionVerdict),
    /// Detection said fake; ranked against fake-labeled exemplars only.
    Fake { verdict: DetectionVerdict, ranking: RankedResult },
}

impl TwoStageOutcome {
    /// Final predicted label: [`REAL_LABEL`] or the attributed generator.
    pub fn label(&self, vote: bool) -> &str {
        match self {
            TwoStageOutcome::Real(_) => REAL_LABEL,
            TwoStageOutcome::Fake { ranking, .. } => {
                ranking.predicted_label(vote).unwrap_or(REAL_LABEL)
            }
        }
    }

    pub fn verdict(&self) -> &DetectionVerdict {
        match self {
            TwoStageOutcome::Real(v) => v,
            TwoStageOutcome::Fake { verdict, .. } => verdict,
        }
    }
}

/// Detection first; only queries judged fake are attributed, and only
/// against exemplars not labelled [`REAL_LABEL`].
pub fn two_stage_attribute(
    fp: &FingerprintImage,
    registry: &Registry,
    prototype: &RealPrototype,
    params: &EncoderParams,
    threshold: f64,
    k: usize,
) -> Result<TwoStageOutcome> {
    check_encoder(registry, params)?;
    let query = params.embed(fp)?;
    let verdict = detect_feature(&query, prototype, threshold)?;
    if verdict.is_real {
        return Ok(TwoStageOutcome::Real(verdict));
    }
    let ranking = rank_records(&query, registry, k, true)?;
    Ok(TwoStageOutcome::Fake { verdict, ranking })
}

fn check_encoder(registry: &Registry, params: &EncoderParams) -> Result<()> {
    if registry.feature_dim() != params.config.feature_dim {
        return Err(Error::IncompatibleEncoder(format!(
            "registry dim {} vs encoder feature dim {}",
            registry.feature_dim(),
            params.config.feature_dim
        )));
    }
    Ok(())
}

fn rank_records(
    query: &FeatureVector,
    registry: &Registry,
    k: usize,
    fakes_only: bool,
) -> Result<RankedResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if query.len() != registry.feature_dim() {
        return Err(Error::IncompatibleEncoder(format!(
            "query dim {} vs registry dim {}",
            query.len(),
            registry.feature_dim()
        )));
    }
    let mut entries: Vec<RankedEntry> = registry
        .records()
        .iter()
        .filter(|r| !fakes_only || r.label != REAL_LABEL)
        .map(|r| RankedEntry {
            id: r.id,
            label: r.label.clone(),
            similarity: cosine_similarity(query, &r.feature),
        })
        .collect();
    if entries.is_empty() {
        return Err(Error::InvalidArgument(if fakes_only {
            "registry has no fake-labeled exemplars".into()
        } else {
            "registry is empty".into()
        }));
    }
    entries.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .expect("similarities are finite")
            .then(a.id.cmp(&b.id))
    });
    entries.truncate(k);
    Ok(RankedResult { entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::fingerprint::{extract_fingerprint, RgbImage};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(values: &[f64]) -> FeatureVector {
        FeatureVector::new(values.to_vec()).normalize().unwrap()
    }

    fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> FeatureVector {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Ok(u) = FeatureVector::new(v).normalize() {
                return u;
            }
        }
    }

    fn small_encoder() -> EncoderParams {
        EncoderParams::init(&EncoderConfig {
            input_side: 32,
            conv_layers: vec![(4, 3, 1)],
            feature_dim: 6,
            num_pretext_classes: 2,
            seed: 3,
        })
        .unwrap()
    }

    fn checkered_image(step: usize) -> RgbImage {
        // Background 96 has empty low bits; the foreground fills them.
        let mut img = RgbImage::filled(32, 32, [96, 96, 96]).unwrap();
        for row in 0..32 {
            for col in 0..32 {
                if (row / step + col / step).is_multiple_of(2) {
                    img.set_pixel(row, col, [101, 102, 103]);
                }
            }
        }
        img
    }

    #[test]
    fn registered_image_retrieves_itself_at_rank_one() {
        let params = small_encoder();
        let mut reg = Registry::new(6);
        for (i, step) in [1usize, 2, 4].iter().enumerate() {
            reg.register_images(
                &format!("gen{i}"),
                &[(format!("{step}.png"), checkered_image(*step))],
                &params,
                0,
            )
            .unwrap();
        }
        let fp = extract_fingerprint(&checkered_image(2));
        let result = attribute(&fp, &reg, &params, 3).unwrap();
        assert_eq!(result.top_label(), Some("gen1"));
        assert!((result.entries[0].similarity - 1.0).abs() < 1e-6);
    }

    #[test]
    fn k_larger_than_registry_returns_full_ranking() {
        let mut reg = Registry::new(2);
        reg.add("a", "x", 0, unit(&[1.0, 0.0])).unwrap();
        reg.add("b", "y", 0, unit(&[0.0, 1.0])).unwrap();
        let result = attribute_feature(&unit(&[1.0, 0.1]), &reg, 10).unwrap();
        assert_eq!(result.entries.len(), 2);
        assert_eq!(result.top_label(), Some("a"));
    }

    #[test]
    fn rejects_zero_k_and_empty_registry() {
        let reg = Registry::new(2);
        assert!(attribute_feature(&unit(&[1.0, 0.0]), &reg, 1).is_err());
        let mut reg = Registry::new(2);
        reg.add("a", "x", 0, unit(&[1.0, 0.0])).unwrap();
        assert!(attribute_feature(&unit(&[1.0, 0.0]), &reg, 0).is_err());
    }

    /// Full-sort oracle: repeatedly selects the best remaining record by
    /// (similarity desc, id asc), independent of the library's sort.
    fn selection_sort_ranking(query: &FeatureVector, reg: &Registry) -> Vec<(u64, f64)> {
        let mut remaining: Vec<(u64, f64)> = reg
            .records()
            .iter()
            .map(|r| (r.id, cosine_similarity(query, &r.feature)))
            .collect();
        let mut out = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for i in 1..remaining.len() {
                let better = remaining[i].1 > remaining[best].1
                    || (remaining[i].1 == remaining[best].1
                        && remaining[i].0 < remaining[best].0);
                if better {
                    best = i;
                }
            }
            out.push(remaining.remove(best));
        }
        out
    }

    #[test]
    fn matches_selection_sort_oracle_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..20 {
            let mut reg = Registry::new(4);
            let mut pool: Vec<FeatureVector> = Vec::new();
            for i in 0..50 {
                // Reuse an earlier feature sometimes to force exact ties.
                let f = if i > 0 && rng.random_range(0..4) == 0 {
                    pool[rng.random_range(0..pool.len())].clone()
                } else {
                    random_unit(&mut rng, 4)
                };
                pool.push(f.clone());
                reg.add(&format!("g{}", i % 7), "p", 0, f).unwrap();
            }
            let query = random_unit(&mut rng, 4);
            let oracle = selection_sort_ranking(&query, &reg);
            let result = attribute_feature(&query, &reg, 5).unwrap();
            assert_eq!(result.entries.len(), 5, "case {case}");
            for (entry, (oid, osim)) in result.entries.iter().zip(&oracle) {
                assert_eq!(entry.id, *oid, "case {case}");
                assert_eq!(entry.similarity, *osim, "case {case}");
            }
        }
    }

    #[test]
    fn exact_ties_order_by_ascending_id() {
        let mut reg = Registry::new(2);
        let f = unit(&[1.0, 0.0]);
        for label in ["b", "a", "c"] {
            reg.add(label, "p", 0, f.clone()).unwrap();
        }
        let result = attribute_feature(&f, &reg, 3).unwrap();
        let ids: Vec<u64> = result.entries.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn low_similarity_additions_leave_top_k_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let query = random_unit(&mut rng, 4);
        let mut reg = Registry::new(4);
        for i in 0..30 {
            reg.add(&format!("g{i}"), "p", 0, random_unit(&mut rng, 4)).unwrap();
        }
        let before = attribute_feature(&query, &reg, 5).unwrap();
        let cutoff = before.entries.last().unwrap().similarity;
        // A vector opposite the query scores -1 < cutoff.
        let opposite = FeatureVector::new(query.values.iter().map(|v| -v).collect())
            .normalize()
            .unwrap();
        if cosine_similarity(&query, &opposite) < cutoff {
            reg.add("new", "p", 0, opposite).unwrap();
            let after = attribute_feature(&query, &reg, 5).unwrap();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn boundary_similarity_counts_as_real() {
        let proto = RealPrototype::from_unit(unit(&[1.0, 0.0]), 1).unwrap();
        // Exactly the prototype: similarity clamps to 1.0 with threshold 1.0.
        let v = detect_feature(&unit(&[1.0, 0.0]), &proto, 1.0).unwrap();
        assert!(v.is_real);
        assert_eq!(v.similarity, 1.0);
        // Orthogonal query at threshold 0: similarity 0 >= 0 counts as real.
        let v = detect_feature(&unit(&[0.0, 1.0]), &proto, 0.0).unwrap();
        assert!(v.is_real);
        assert_eq!(v.similarity, 0.0);
    }

    #[test]
    fn raising_threshold_never_turns_fake_into_real() {
        let proto = RealPrototype::from_unit(unit(&[1.0, 0.0]), 1).unwrap();
        let query = unit(&[0.7, 0.3]);
        let mut last_real = true;
        for i in 0..=20 {
            let t = -1.0 + 2.0 * f64::from(i) / 20.0;
            let v = detect_feature(&query, &proto, t).unwrap();
            assert!(v.is_real <= last_real, "verdict flipped back to real at t={t}");
            last_real = v.is_real;
        }
    }

    #[test]
    fn detect_validates_threshold() {
        let proto = RealPrototype::from_unit(unit(&[1.0, 0.0]), 1).unwrap();
        assert!(detect_feature(&unit(&[1.0, 0.0]), &proto, 1.5).is_err());
        assert!(detect_feature(&unit(&[1.0, 0.0]), &proto, f64::NAN).is_err());
    }

    #[test]
    fn two_stage_matches_detect_then_restricted_attribute() {
        let params = small_encoder();
        let mut reg = Registry::new(6);
        reg.register_images("genA", &[("a.png".into(), checkered_image(1))], &params, 0).unwrap();
        reg.register_images("genB", &[("b.png".into(), checkered_image(4))], &params, 0).unwrap();
        let real_fp = extract_fingerprint(&checkered_image(2));
        let proto = RealPrototype::from_features(&[params.embed(&real_fp).unwrap()]).unwrap();

        let query = extract_fingerprint(&checkered_image(4));
        for threshold in [0.0, 0.5, 0.999] {
            let outcome =
                two_stage_attribute(&query, &reg, &proto, &params, threshold, 2).unwrap();
            let verdict = detect(&query, &proto, &params, threshold).unwrap();
            assert_eq!(*outcome.verdict(), verdict);
            match outcome {
                TwoStageOutcome::Real(_) => {
                    assert!(verdict.is_real);
                    assert_eq!(
                        two_stage_attribute(&query, &reg, &proto, &params, threshold, 2)
                            .unwrap()
                            .label(false),
                        REAL_LABEL
                    );
                }
                TwoStageOutcome::Fake { ranking, .. } => {
                    assert!(!verdict.is_real);
                    let direct = attribute(&query, &reg, &params, 2).unwrap();
                    assert_eq!(ranking, direct);
                }
            }
        }
    }

    #[test]
    fn real_verdict_short_circuits_even_without_fake_exemplars() {
        let params = small_encoder();
        let mut reg = Registry::new(6);
        let img = checkered_image(2);
        reg.register_images(REAL_LABEL, &[("r.png".into(), img.clone())], &params, 0).unwrap();
        let fp = extract_fingerprint(&img);
        let proto = RealPrototype::from_features(&[params.embed(&fp).unwrap()]).unwrap();
        // Same image: similarity 1, judged real, registry's lack of fakes is moot.
        let outcome = two_stage_attribute(&fp, &reg, &proto, &params, 0.85, 1).unwrap();
        assert!(matches!(outcome, TwoStageOutcome::Real(_)));
        assert_eq!(outcome.label(false), REAL_LABEL);
        // An all-real registry cannot attribute a fake verdict.
        assert!(two_stage_attribute(&fp, &reg, &proto, &params, 1.0, 1).is_err()
            || cosine_similarity(&params.embed(&fp).unwrap(), &proto.values) >= 1.0);
    }

    #[test]
    fn fake_attribution_skips_real_labeled_records() {
        let mut reg = Registry::new(2);
        reg.add(REAL_LABEL, "r", 0, unit(&[1.0, 0.0])).unwrap();
        reg.add("genA", "a", 0, unit(&[0.9, 0.1])).unwrap();
        let proto = RealPrototype::from_unit(unit(&[1.0, 0.0]), 1).unwrap();
        let query = unit(&[1.0, 0.05]);
        // Threshold 1.0 forces a fake verdict although the query is nearly real.
        let sim = cosine_similarity(&query, &proto.values);
        assert!(sim < 1.0);
        let params = small_encoder();
        // Bypass encoding: rank directly.
        let ranking = rank_records(&query, &reg, 5, true).unwrap();
        assert_eq!(ranking.entries.len(), 1);
        assert_eq!(ranking.entries[0].label, "genA");
        let _ = params;
    }

    #[test]
    fn batch_attribution_matches_sequential() {
        let params = small_encoder();
        let mut reg = Registry::new(6);
        for (i, step) in [1usize, 2, 4].iter().enumerate() {
            reg.register_images(
                &format!("gen{i}"),
                &[(format!("{i}.png"), checkered_image(*step))],
                &params,
                0,
            )
            .unwrap();
        }
        let queries: Vec<FingerprintImage> =
            [1usize, 4, 2, 1].iter().map(|s| extract_fingerprint(&checkered_image(*s))).collect();
        let batch = attribute_batch(&queries, &reg, &params, 2).unwrap();
        for (fp, got) in queries.iter().zip(&batch) {
            assert_eq!(got, &attribute(fp, &reg, &params, 2).unwrap());
        }
    }

    #[test]
    fn majority_vote_can_override_top_one() {
        let result = RankedResult {
            entries: vec![
                RankedEntry { id: 0, label: "a".into(), similarity: 0.99 },
                RankedEntry { id: 1, label: "b".into(), similarity: 0.98 },
                RankedEntry { id: 2, label: "b".into(), similarity: 0.97 },
            ],
        };
        assert_eq!(result.predicted_label(false), Some("a"));
        assert_eq!(result.predicted_label(true), Some("b"));
        // Vote ties resolve to the label seen earliest in the ranking.
        let tied = RankedResult {
            entries: vec![
                RankedEntry { id: 0, label: "a".into(), similarity: 0.9 },
                RankedEntry { id: 1, label: "b".into(), similarity: 0.8 },
            ],
        };
        assert_eq!(tied.predicted_label(true), Some("a"));
    }
}
