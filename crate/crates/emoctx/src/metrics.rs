//! Evaluation metrics and reports.
//!
//! Discrete categories are scored with non-interpolated average
//! precision per category, averaged over categories that have at least
//! one positive instance. Continuous affect dimensions are scored with
//! mean absolute error per dimension. Reports serialize to JSON and can
//! be diffed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;

/// Non-interpolated average precision.
///
/// Instances are ranked by descending score; equal scores keep their
/// original relative order, so the metric is a pure function of the
/// input and never depends on sort internals. AP is the mean, over
/// positive instances, of the precision at each positive's rank:
/// `AP = (1/P) * sum over positives at rank r of (positives at rank <= r) / r`.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            context: "average_precision",
            left: scores.len(),
            right: labels.len(),
        });
    }
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Err(Error::NoPositives {
            category: String::new(),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut hits = 0usize;
    let mut acc = 0.0f64;
    for (rank0, &idx) in order.iter().enumerate() {
        if labels[idx] {
            hits += 1;
            acc += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(acc / total_pos as f64)
}

/// Per-category AP results over a prediction matrix.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DiscreteMetrics {
    /// AP per category name, only categories with positives.
    pub per_category_ap: BTreeMap<String, f64>,
    /// Categories skipped because the evaluation set has no positive
    /// instance for them.
    pub excluded_categories: Vec<String>,
    /// Mean AP over the included categories.
    pub mean_ap: f64,
}

/// Score a `[n, k]` prediction matrix against boolean labels of the same
/// shape. `categories` names the `k` columns. Categories without a
/// single positive are reported as excluded, not scored.
pub fn evaluate_discrete(
    scores: &[f64],
    labels: &[bool],
    categories: &[String],
) -> Result<DiscreteMetrics> {
    let k = categories.len();
    if k == 0 {
        return Err(Error::InvalidConfig {
            msg: "empty category list".to_string(),
        });
    }
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            context: "evaluate_discrete",
            left: scores.len(),
            right: labels.len(),
        });
    }
    if scores.is_empty() || scores.len() % k != 0 {
        return Err(Error::ShapeMismatch {
            context: "evaluate_discrete",
            expected: format!("nonempty multiple of {k}"),
            actual: scores.len().to_string(),
        });
    }
    let n = scores.len() / k;
    // Each category scores independently.
    let per_cat: Vec<Option<f64>> = exec::try_map_indexed(k, |c| {
        let col_scores: Vec<f64> = (0..n).map(|i| scores[i * k + c]).collect();
        let col_labels: Vec<bool> = (0..n).map(|i| labels[i * k + c]).collect();
        if !col_labels.iter().any(|&l| l) {
            return Ok(None);
        }
        average_precision(&col_scores, &col_labels).map(Some)
    })?;

    let mut per_category_ap = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut included = 0usize;
    for (c, ap) in per_cat.into_iter().enumerate() {
        match ap {
            Some(v) => {
                per_category_ap.insert(categories[c].clone(), v);
                sum += v;
                included += 1;
            }
            None => excluded.push(categories[c].clone()),
        }
    }
    if included == 0 {
        return Err(Error::NoPositives {
            category: "all categories".to_string(),
        });
    }
    Ok(DiscreteMetrics {
        per_category_ap,
        excluded_categories: excluded,
        mean_ap: sum / included as f64,
    })
}

/// Mean absolute error per affect dimension.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VadMetrics {
    pub mae_valence: f64,
    pub mae_arousal: f64,
    pub mae_dominance: f64,
    /// Mean of the three per-dimension errors.
    pub mean_mae: f64,
}

/// Score `[n, 3]` affect predictions against targets of the same shape.
pub fn evaluate_vad(pred: &[f64], target: &[f64]) -> Result<VadMetrics> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch {
            context: "evaluate_vad",
            left: pred.len(),
            right: target.len(),
        });
    }
    if pred.is_empty() || pred.len() % 3 != 0 {
        return Err(Error::ShapeMismatch {
            context: "evaluate_vad",
            expected: "nonempty multiple of 3".to_string(),
            actual: pred.len().to_string(),
        });
    }
    let n = (pred.len() / 3) as f64;
    let mut mae = [0.0f64; 3];
    for (j, (p, t)) in pred.iter().zip(target).enumerate() {
        mae[j % 3] += (p - t).abs();
    }
    for m in &mut mae {
        *m /= n;
    }
    Ok(VadMetrics {
        mae_valence: mae[0],
        mae_arousal: mae[1],
        mae_dominance: mae[2],
        mean_mae: (mae[0] + mae[1] + mae[2]) / 3.0,
    })
}

/// One evaluation run, self-describing enough to be compared later.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    /// Dataset tag the evaluation ran on.
    pub source_tag: String,
    /// Hash of the producing configuration, empty when unknown.
    pub config_hash: String,
    /// Whether only each person's first-listed category counted as a
    /// positive.
    pub predominant_only: bool,
    /// Number of scored person instances.
    pub instances: usize,
    pub discrete: DiscreteMetrics,
    pub vad: VadMetrics,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<MetricsReport> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig {
            msg: format!("bad metrics report: {e}"),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<MetricsReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Signed differences `b - a` between two reports.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportDelta {
    pub mean_ap: f64,
    pub mean_mae: f64,
    pub per_category_ap: BTreeMap<String, f64>,
    /// Categories where `b` improves on `a`.
    pub improved: Vec<String>,
    /// Categories where `b` is worse than `a`.
    pub regressed: Vec<String>,
}

/// Compare two reports category by category. The reports must have been
/// produced over the same category set; comparing mismatched sets would
/// silently produce nonsense, so it is an error.
pub fn compare_reports(a: &MetricsReport, b: &MetricsReport) -> Result<ReportDelta> {
    let cats_a: Vec<&String> = a.discrete.per_category_ap.keys().collect();
    let cats_b: Vec<&String> = b.discrete.per_category_ap.keys().collect();
    if cats_a != cats_b {
        let only_a: Vec<&str> = cats_a
            .iter()
            .filter(|c| !cats_b.contains(c))
            .map(|c| c.as_str())
            .collect();
        let only_b: Vec<&str> = cats_b
            .iter()
            .filter(|c| !cats_a.contains(c))
            .map(|c| c.as_str())
            .collect();
        return Err(Error::CategorySetMismatch {
            detail: format!("only in first: {only_a:?}; only in second: {only_b:?}"),
        });
    }
    let mut per_category_ap = BTreeMap::new();
    let mut improved = Vec::new();
    let mut regressed = Vec::new();
    for (name, &ap_a) in &a.discrete.per_category_ap {
        let ap_b = b.discrete.per_category_ap[name];
        let d = ap_b - ap_a;
        per_category_ap.insert(name.clone(), d);
        if d > 0.0 {
            improved.push(name.clone());
        } else if d < 0.0 {
            regressed.push(name.clone());
        }
    }
    Ok(ReportDelta {
        mean_ap: b.discrete.mean_ap - a.discrete.mean_ap,
        mean_mae: b.vad.mean_mae - a.vad.mean_mae,
        per_category_ap,
        improved,
        regressed,
    })
}

/// Render a delta as an aligned text table.
pub fn format_delta(a: &MetricsReport, b: &MetricsReport, delta: &ReportDelta) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "{:<18} {:>10} {:>10} {:>10}", "metric", "first", "second", "delta");
    let _ = writeln!(
        out,
        "{:<18} {:>10.4} {:>10.4} {:>+10.4}",
        "mean_ap", a.discrete.mean_ap, b.discrete.mean_ap, delta.mean_ap
    );
    let _ = writeln!(
        out,
        "{:<18} {:>10.4} {:>10.4} {:>+10.4}",
        "mean_mae", a.vad.mean_mae, b.vad.mean_mae, delta.mean_mae
    );
    for (name, d) in &delta.per_category_ap {
        let _ = writeln!(
            out,
            "{:<18} {:>10.4} {:>10.4} {:>+10.4}",
            name, a.discrete.per_category_ap[name], b.discrete.per_category_ap[name], d
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Quadratic-time AP: for every positive, count, over all instances,
    /// how many rank at or above it, and how many of those are positive.
    /// An instance ranks above another if its score is higher, or equal
    /// with a smaller index.
    fn ap_bruteforce(scores: &[f64], labels: &[bool]) -> f64 {
        let n = scores.len();
        let ranks_above = |j: usize| -> usize {
            (0..n)
                .filter(|&i| {
                    scores[i] > scores[j] || (scores[i] == scores[j] && i < j)
                })
                .count()
        };
        let mut total = 0.0;
        let mut positives = 0usize;
        for j in 0..n {
            if !labels[j] {
                continue;
            }
            positives += 1;
            let rank = ranks_above(j) + 1;
            let pos_at_or_above = (0..n)
                .filter(|&i| labels[i] && (i == j || scores[i] > scores[j]
                    || (scores[i] == scores[j] && i < j)))
                .count();
            total += pos_at_or_above as f64 / rank as f64;
        }
        total / positives as f64
    }

    #[test]
    fn worked_case_alternating_labels() {
        let scores = [0.9, 0.8, 0.7, 0.6];
        let labels = [true, false, true, false];
        // 1/1 at rank 1, 2/3 at rank 3; mean of the two.
        let want = (1.0 + 2.0 / 3.0) / 2.0;
        let got = average_precision(&scores, &labels).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 0.8333, epsilon = 5e-5);
    }

    #[test]
    fn perfect_and_inverted_rankings() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels_perfect = [true, true, false, false];
        assert_abs_diff_eq!(
            average_precision(&scores, &labels_perfect).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let labels_worst = [false, false, true, true];
        // 1/3 at rank 3, 2/4 at rank 4.
        assert_abs_diff_eq!(
            average_precision(&scores, &labels_worst).unwrap(),
            (1.0 / 3.0 + 0.5) / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn ties_resolve_by_original_index() {
        // Two equal scores: the earlier index ranks first.
        let scores = [0.5, 0.5];
        assert_abs_diff_eq!(
            average_precision(&scores, &[true, false]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            average_precision(&scores, &[false, true]).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn matches_bruteforce_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..200 {
            let n = rng.gen_range(1..40);
            // Coarse scores force plenty of ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 4.0).collect();
            let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
            if !labels.iter().any(|&l| l) {
                continue;
            }
            let got = average_precision(&scores, &labels).unwrap();
            let want = ap_bruteforce(&scores, &labels);
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
            assert!((0.0..=1.0).contains(&got), "trial {trial}: {got}");
        }
    }

    #[test]
    fn no_positives_is_an_error() {
        assert!(matches!(
            average_precision(&[0.1, 0.2], &[false, false]).unwrap_err(),
            Error::NoPositives { .. }
        ));
    }

    #[test]
    fn discrete_eval_excludes_empty_categories() {
        let categories: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        // 4 instances, 3 categories; category C never positive.
        let scores = vec![
            0.9, 0.1, 0.3, //
            0.8, 0.7, 0.2, //
            0.1, 0.9, 0.4, //
            0.2, 0.3, 0.8,
        ];
        let labels = vec![
            true, false, false, //
            true, true, false, //
            false, true, false, //
            false, false, false,
        ];
        let m = evaluate_discrete(&scores, &labels, &categories).unwrap();
        assert_eq!(m.excluded_categories, vec!["C".to_string()]);
        assert_eq!(m.per_category_ap.len(), 2);
        let want_a = average_precision(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false])
            .unwrap();
        let want_b = average_precision(&[0.1, 0.7, 0.9, 0.3], &[false, true, true, false])
            .unwrap();
        assert_abs_diff_eq!(m.per_category_ap["A"], want_a, epsilon = 1e-12);
        assert_abs_diff_eq!(m.per_category_ap["B"], want_b, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mean_ap, (want_a + want_b) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn vad_worked_case() {
        // Predictions (1,1,0) off target (2,2,0) per instance pattern:
        // per-dimension errors 1, 1, 0 give mean 2/3.
        let pred = vec![1.0, 1.0, 0.0, 3.0, 5.0, 7.0];
        let target = vec![2.0, 2.0, 0.0, 2.0, 4.0, 7.0];
        let m = evaluate_vad(&pred, &target).unwrap();
        assert_abs_diff_eq!(m.mae_valence, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mae_arousal, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mae_dominance, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.mean_mae, 2.0 / 3.0, epsilon = 1e-12);
    }

    fn report(aps: &[(&str, f64)], mean_mae: f64) -> MetricsReport {
        let per_category_ap: BTreeMap<String, f64> =
            aps.iter().map(|(n, v)| (n.to_string(), *v)).collect();
        let mean_ap = per_category_ap.values().sum::<f64>() / per_category_ap.len() as f64;
        MetricsReport {
            source_tag: "test".to_string(),
            config_hash: String::new(),
            predominant_only: false,
            instances: 10,
            discrete: DiscreteMetrics {
                per_category_ap,
                excluded_categories: vec![],
                mean_ap,
            },
            vad: VadMetrics {
                mae_valence: mean_mae,
                mae_arousal: mean_mae,
                mae_dominance: mean_mae,
                mean_mae,
            },
        }
    }

    #[test]
    fn report_json_round_trip() {
        let r = report(&[("A", 0.5), ("B", 0.75)], 1.25);
        let back = MetricsReport::from_json(&r.to_json()).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn compare_reports_signed_deltas() {
        let a = report(&[("A", 0.50), ("B", 0.40)], 1.00);
        let b = report(&[("A", 0.62), ("B", 0.35)], 0.90);
        let d = compare_reports(&a, &b).unwrap();
        assert_abs_diff_eq!(d.per_category_ap["A"], 0.12, epsilon = 1e-12);
        assert_abs_diff_eq!(d.per_category_ap["B"], -0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(d.mean_ap, (0.62 + 0.35) / 2.0 - 0.45, epsilon = 1e-12);
        assert_abs_diff_eq!(d.mean_mae, -0.10, epsilon = 1e-12);
        assert_eq!(d.improved, vec!["A".to_string()]);
        assert_eq!(d.regressed, vec!["B".to_string()]);
    }

    #[test]
    fn compare_rejects_category_mismatch() {
        let a = report(&[("A", 0.5), ("B", 0.4)], 1.0);
        let b = report(&[("A", 0.5), ("C", 0.4)], 1.0);
        assert!(matches!(
            compare_reports(&a, &b).unwrap_err(),
            Error::CategorySetMismatch { .. }
        ));
    }

    #[test]
    fn reference_deltas_match_hand_computation() {
        // Two scenarios with known signed deltas.
        let a = report(&[("A", 0.4)], 1.0);
        let b = report(&[("A", 0.272)], 1.0);
        let d = compare_reports(&a, &b).unwrap();
        assert_abs_diff_eq!(d.mean_ap * 100.0, -12.80, epsilon = 1e-9);

        let a = report(&[("A", 0.25)], 1.0);
        let b = report(&[("A", 0.2595)], 1.0);
        let d = compare_reports(&a, &b).unwrap();
        assert_abs_diff_eq!(d.mean_ap * 100.0, 0.95, epsilon = 1e-9);
    }
}
