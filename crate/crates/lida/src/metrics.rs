//! Retrieval and detection metrics: Rank-1, mean average precision, and
//! detection accuracy, reported per label and as unweighted label averages.
//!
//! Metrics consume rankings (label sequences), never raw similarity scores,
//! so any order-preserving transform of similarities leaves them unchanged.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::retrieval::{DetectionVerdict, RankedResult};

/// Percentage of queries whose rank-1 label equals the true label.
pub fn rank1(results: &[RankedResult], truths: &[impl AsRef<str>]) -> Result<f64> {
    check_aligned(results.len(), truths.len())?;
    let hits = results
        .iter()
        .zip(truths)
        .filter(|(r, t)| r.top_label() == Some(t.as_ref()))
        .count();
    Ok(100.0 * hits as f64 / results.len() as f64)
}

/// Mean average precision as a percentage, plus how many queries were
/// excluded because no ranked record carried their true label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapScore {
    pub percent: f64,
    pub excluded: usize,
}

/// Average precision of one ranking: the mean, over relevant ranks r, of
/// (relevant items at ranks <= r) / r. Returns None when nothing is
/// relevant. Each ranking must cover the full registry for this to be the
/// true AP.
pub fn average_precision(result: &RankedResult, truth: &str) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (idx, entry) in result.entries.iter().enumerate() {
        if entry.label == truth {
            hits += 1;
            sum += hits as f64 / (idx + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Mean of per-query average precisions, as a percentage.
pub fn mean_average_precision(
    results: &[RankedResult],
    truths: &[impl AsRef<str>],
) -> Result<MapScore> {
    check_aligned(results.len(), truths.len())?;
    let mut sum = 0.0;
    let mut counted = 0usize;
    let mut excluded = 0usize;
    for (result, truth) in results.iter().zip(truths) {
        match average_precision(result, truth.as_ref()) {
            Some(ap) => {
                sum += ap;
                counted += 1;
            }
            None => excluded += 1,
        }
    }
    if counted == 0 {
        return Err(Error::InvalidArgument(
            "no query's true label appears in any ranking".into(),
        ));
    }
    Ok(MapScore { percent: 100.0 * sum / counted as f64, excluded })
}

/// Percentage of verdicts matching the ground truth.
pub fn detection_accuracy(verdicts: &[DetectionVerdict], truth_is_real: &[bool]) -> Result<f64> {
    check_aligned(verdicts.len(), truth_is_real.len())?;
    let hits = verdicts
        .iter()
        .zip(truth_is_real)
        .filter(|(v, t)| v.is_real == **t)
        .count();
    Ok(100.0 * hits as f64 / verdicts.len() as f64)
}

fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!("got {a} results but {b} truths")));
    }
    if a == 0 {
        return Err(Error::InvalidArgument("nothing to score".into()));
    }
    Ok(())
}

/// Per-label scores within a report.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelStats {
    pub label: String,
    pub queries: usize,
    pub rank1: f64,
    /// None when every query of this label was excluded from mAP.
    pub map: Option<f64>,
}

/// Full evaluation: per-label Rank-1 and mAP, their unweighted averages
/// over labels, and optionally detection accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted by label.
    pub per_label: Vec<LabelStats>,
    /// Unweighted mean of per-label Rank-1.
    pub avg_rank1: f64,
    /// Unweighted mean of per-label mAP over labels where it is defined.
    pub avg_map: f64,
    pub query_count: usize,
    /// Queries excluded from mAP because their label was never ranked.
    pub excluded: usize,
    /// (accuracy percentage, verdict count) when detection was evaluated.
    pub detection: Option<(f64, usize)>,
}

impl EvalReport {
    pub fn from_rankings(
        results: &[RankedResult],
        truths: &[impl AsRef<str>],
        detection: Option<(&[DetectionVerdict], &[bool])>,
    ) -> Result<EvalReport> {
        check_aligned(results.len(), truths.len())?;
        let mut groups: BTreeMap<&str, Vec<&RankedResult>> = BTreeMap::new();
        for (result, truth) in results.iter().zip(truths) {
            groups.entry(truth.as_ref()).or_default().push(result);
        }
        let mut per_label = Vec::with_capacity(groups.len());
        let mut excluded = 0usize;
        for (label, group) in &groups {
            let hits =
                group.iter().filter(|r| r.top_label() == Some(label)).count();
            let mut ap_sum = 0.0;
            let mut ap_count = 0usize;
            for result in group {
                match average_precision(result, label) {
                    Some(ap) => {
                        ap_sum += ap;
                        ap_count += 1;
                    }
                    None => excluded += 1,
                }
            }
            per_label.push(LabelStats {
                label: label.to_string(),
                queries: group.len(),
                rank1: 100.0 * hits as f64 / group.len() as f64,
                map: (ap_count > 0).then(|| 100.0 * ap_sum / ap_count as f64),
            });
        }
        let avg_rank1 =
            per_label.iter().map(|s| s.rank1).sum::<f64>() / per_label.len() as f64;
        let defined: Vec<f64> = per_label.iter().filter_map(|s| s.map).collect();
        if defined.is_empty() {
            return Err(Error::InvalidArgument(
                "no query's true label appears in any ranking".into(),
            ));
        }
        let avg_map = defined.iter().sum::<f64>() / defined.len() as f64;
        let detection = match detection {
            Some((verdicts, truth_real)) => {
                Some((detection_accuracy(verdicts, truth_real)?, verdicts.len()))
            }
            None => None,
        };
        Ok(EvalReport {
            per_label,
            avg_rank1,
            avg_map,
            query_count: results.len(),
            excluded,
            detection,
        })
    }

    /// Aligned human-readable table.
    pub fn text_table(&self) -> String {
        let width = self
            .per_label
            .iter()
            .map(|s| s.label.len())
            .chain(["Average".len(), "Label".len()])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        out.push_str(&format!("{:<width$}  {:>7}  {:>8}  {:>8}\n", "Label", "Queries", "Rank-1%", "mAP%"));
        for s in &self.per_label {
            let map = s.map.map_or("-".to_string(), |m| format!("{m:.2}"));
            out.push_str(&format!(
                "{:<width$}  {:>7}  {:>8.2}  {:>8}\n",
                s.label, s.queries, s.rank1, map
            ));
        }
        out.push_str(&format!(
            "{:<width$}  {:>7}  {:>8.2}  {:>8.2}\n",
            "Average", "-", self.avg_rank1, self.avg_map
        ));
        if let Some((acc, n)) = self.detection {
            out.push_str(&format!("Detection accuracy: {acc:.2}% over {n} verdicts\n"));
        }
        if self.excluded > 0 {
            out.push_str(&format!(
                "Warning: {} queries excluded from mAP (label never ranked)\n",
                self.excluded
            ));
        }
        out
    }

    /// Long-format delimited rows (`metric<TAB>label<TAB>queries<TAB>value`),
    /// one row per (metric, label), for plotting.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tlabel\tqueries\tvalue_pct\n");
        for s in &self.per_label {
            out.push_str(&format!("rank1\t{}\t{}\t{:.6}\n", s.label, s.queries, s.rank1));
            match s.map {
                Some(m) => out.push_str(&format!("map\t{}\t{}\t{:.6}\n", s.label, s.queries, m)),
                None => out.push_str(&format!("map\t{}\t{}\t-\n", s.label, s.queries)),
            }
        }
        out.push_str(&format!("rank1\taverage\t{}\t{:.6}\n", self.query_count, self.avg_rank1));
        out.push_str(&format!("map\taverage\t{}\t{:.6}\n", self.query_count, self.avg_map));
        if let Some((acc, n)) = self.detection {
            out.push_str(&format!("detection_accuracy\tall\t{n}\t{acc:.6}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::RankedEntry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Ranking whose entries carry the given labels in order, with strictly
    /// decreasing similarities so the order is unambiguous.
    fn ranking(labels: &[&str]) -> RankedResult {
        RankedResult {
            entries: labels
                .iter()
                .enumerate()
                .map(|(i, l)| RankedEntry {
                    id: i as u64,
                    label: l.to_string(),
                    similarity: 1.0 - 0.01 * i as f64,
                })
                .collect(),
        }
    }

    #[test]
    fn rank1_basic_counts() {
        let results = vec![ranking(&["a", "b"]), ranking(&["b", "a"])];
        assert_eq!(rank1(&results, &["a", "b"]).unwrap(), 100.0);
        let results = vec![
            ranking(&["a"]),
            ranking(&["b"]),
            ranking(&["b"]),
            ranking(&["b"]),
        ];
        assert_eq!(rank1(&results, &["a", "a", "a", "a"]).unwrap(), 25.0);
    }

    #[test]
    fn rank1_matches_hand_loop_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels = ["a", "b", "c"];
        let results: Vec<RankedResult> = (0..30)
            .map(|_| {
                let order: Vec<&str> =
                    (0..3).map(|_| labels[rng.random_range(0..3)]).collect();
                ranking(&order)
            })
            .collect();
        let truths: Vec<&str> = (0..30).map(|_| labels[rng.random_range(0..3)]).collect();
        let mut hits = 0;
        for (r, t) in results.iter().zip(&truths) {
            if r.entries[0].label == *t {
                hits += 1;
            }
        }
        let expect = 100.0 * f64::from(hits) / 30.0;
        assert_eq!(rank1(&results, &truths).unwrap(), expect);
    }

    #[test]
    fn average_precision_hand_cases() {
        assert_eq!(average_precision(&ranking(&["a", "b"]), "a"), Some(1.0));
        assert_eq!(average_precision(&ranking(&["b", "a"]), "a"), Some(0.5));
        // Relevant at ranks 1, 3, 4 of 6.
        let r = ranking(&["a", "b", "a", "a", "b", "b"]);
        let expect = (1.0 + 2.0 / 3.0 + 3.0 / 4.0) / 3.0;
        let got = average_precision(&r, "a").unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 0.8056).abs() < 1e-4);
        assert_eq!(average_precision(&r, "zzz"), None);
    }

    #[test]
    fn map_excludes_unranked_labels_with_count() {
        let results = vec![ranking(&["a", "b"]), ranking(&["a", "b"])];
        let score = mean_average_precision(&results, &["a", "ghost"]).unwrap();
        assert_eq!(score.excluded, 1);
        assert!((score.percent - 100.0).abs() < 1e-12);
        assert!(mean_average_precision(&results, &["ghost", "ghost"]).is_err());
    }

    /// Independent AP: for each relevant rank, recount the relevant prefix
    /// from scratch (quadratic, structurally unlike the streaming version).
    fn quadratic_ap(result: &RankedResult, truth: &str) -> Option<f64> {
        let n = result.entries.len();
        let mut precisions = Vec::new();
        for r in 1..=n {
            if result.entries[r - 1].label == truth {
                let prefix_hits =
                    result.entries[..r].iter().filter(|e| e.label == truth).count();
                precisions.push(prefix_hits as f64 / r as f64);
            }
        }
        if precisions.is_empty() {
            None
        } else {
            Some(precisions.iter().sum::<f64>() / precisions.len() as f64)
        }
    }

    #[test]
    fn map_and_rank1_match_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let labels = ["a", "b", "c", "d"];
        for _ in 0..100 {
            let n_queries = rng.random_range(1..20);
            let n_records = rng.random_range(1..15);
            let results: Vec<RankedResult> = (0..n_queries)
                .map(|_| {
                    let order: Vec<&str> =
                        (0..n_records).map(|_| labels[rng.random_range(0..4)]).collect();
                    ranking(&order)
                })
                .collect();
            let truths: Vec<&str> =
                (0..n_queries).map(|_| labels[rng.random_range(0..4)]).collect();

            let mut ap_sum = 0.0;
            let mut ap_n = 0usize;
            let mut hits = 0usize;
            for (r, t) in results.iter().zip(&truths) {
                if let Some(ap) = quadratic_ap(r, t) {
                    ap_sum += ap;
                    ap_n += 1;
                }
                if r.entries[0].label == *t {
                    hits += 1;
                }
            }
            let got_rank1 = rank1(&results, &truths).unwrap();
            let expect_rank1 = 100.0 * hits as f64 / n_queries as f64;
            assert!((got_rank1 - expect_rank1).abs() < 1e-12);
            if ap_n > 0 {
                let got = mean_average_precision(&results, &truths).unwrap();
                let expect = 100.0 * ap_sum / ap_n as f64;
                assert!((got.percent - expect).abs() < 1e-12);
            }
        }
    }

    fn verdict(is_real: bool) -> DetectionVerdict {
        DetectionVerdict { is_real, similarity: 0.0, threshold: 0.85 }
    }

    #[test]
    fn detection_accuracy_counts_matches() {
        let v: Vec<DetectionVerdict> = [true, false, true].iter().map(|b| verdict(*b)).collect();
        assert_eq!(detection_accuracy(&v, &[true, false, true]).unwrap(), 100.0);
        assert_eq!(detection_accuracy(&v, &[false, true, false]).unwrap(), 0.0);
        let v: Vec<DetectionVerdict> = (0..10).map(|i| verdict(i < 7)).collect();
        let truth = vec![true; 10];
        assert_eq!(detection_accuracy(&v, &truth).unwrap(), 70.0);
        assert!(detection_accuracy(&v, &[true]).is_err());
    }

    #[test]
    fn report_averages_are_unweighted_over_labels() {
        // Label a: two queries, both right. Label b: one query, wrong.
        let results = vec![
            ranking(&["a", "b"]),
            ranking(&["a", "b"]),
            ranking(&["a", "b"]),
        ];
        let truths = ["a", "a", "b"];
        let report = EvalReport::from_rankings(&results, &truths, None).unwrap();
        assert_eq!(report.query_count, 3);
        assert_eq!(report.per_label.len(), 2);
        assert_eq!(report.per_label[0].rank1, 100.0);
        assert_eq!(report.per_label[1].rank1, 0.0);
        // Unweighted: (100 + 0) / 2, not 2/3 of 100.
        assert_eq!(report.avg_rank1, 50.0);
        // AP for b-queries: relevant at rank 2 of 2 -> 0.5.
        assert!((report.per_label[1].map.unwrap() - 50.0).abs() < 1e-12);
        assert!((report.avg_map - 75.0).abs() < 1e-12);
    }

    #[test]
    fn report_renders_table_and_tsv() {
        let results = vec![ranking(&["a", "b"]), ranking(&["b", "a"])];
        let truths = ["a", "b"];
        let verdicts: Vec<DetectionVerdict> =
            [true, false, true, true].iter().map(|b| verdict(*b)).collect();
        let truth_real = [true, false, false, true];
        let report =
            EvalReport::from_rankings(&results, &truths, Some((&verdicts, &truth_real)))
                .unwrap();
        let table = report.text_table();
        assert!(table.contains("Label"));
        assert!(table.contains("Average"));
        assert!(table.contains("Detection accuracy: 75.00% over 4 verdicts"));
        let tsv = report.to_tsv();
        assert!(tsv.starts_with("metric\tlabel\tqueries\tvalue_pct\n"));
        assert!(tsv.contains("rank1\ta\t1\t100.000000\n"));
        assert!(tsv.contains("map\taverage\t2\t100.000000\n"));
        assert!(tsv.contains("detection_accuracy\tall\t4\t75.000000\n"));
    }

    #[test]
    fn metrics_ignore_similarity_values() {
        let a = ranking(&["a", "b", "a"]);
        // Same label sequence, different similarity scale.
        let b = RankedResult {
            entries: a
                .entries
                .iter()
                .map(|e| RankedEntry {
                    id: e.id,
                    label: e.label.clone(),
                    similarity: e.similarity * 0.5 - 0.2,
                })
                .collect(),
        };
        let truths = ["a"];
        assert_eq!(
            rank1(std::slice::from_ref(&a), &truths).unwrap(),
            rank1(std::slice::from_ref(&b), &truths).unwrap()
        );
        assert_eq!(
            mean_average_precision(&[a], &truths).unwrap(),
            mean_average_precision(&[b], &truths).unwrap()
        );
    }
}
