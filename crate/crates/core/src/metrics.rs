//! Macro-averaged AUPRC and AUROC for multilabel predictions.
//!
//! Average precision uses the step-interpolated sum `Σ (R_k − R_{k−1}) P_k`
//! over descending score thresholds with tied scores grouped into one
//! threshold. AUROC uses the Mann–Whitney pair count with ties worth
//! one half. Both are undefined for single-sign label vectors; such
//! classes are excluded from the macro means and reported as skipped
//! rather than imputed as 0 or 0.5, so a split that lacks a rare class
//! is not silently penalized.

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("score shape {scores:?} does not match label shape {labels:?}")]
    ShapeMismatch {
        scores: Vec<usize>,
        labels: Vec<usize>,
    },
    #[error("expected a [records, classes] matrix, got shape {0:?}")]
    NotAMatrix(Vec<usize>),
    #[error("every class was skipped: no class has both a positive and a negative")]
    AllSkipped,
}

pub type MetricsResult<T> = Result<T, MetricsError>;

/// Indices of `scores` in descending score order; equal scores stay
/// adjacent so callers can group them into one threshold.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

fn is_pos(label: f64) -> bool {
    label > 0.5
}

/// Step-interpolated average precision with ties grouped. Returns `None`
/// when there is no positive label (the metric is undefined, not zero).
pub fn average_precision(scores: &[f64], labels: &[f64]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels must pair up");
    let n_pos = labels.iter().filter(|&&l| is_pos(l)).count();
    if n_pos == 0 {
        return None;
    }
    let order = descending_order(scores);
    let mut ap = 0.0f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0f64;
    let mut at = 0usize;
    while at < order.len() {
        // One tie group = one threshold.
        let score = scores[order[at]];
        while at < order.len() && scores[order[at]] == score {
            if is_pos(labels[order[at]]) {
                tp += 1;
            } else {
                fp += 1;
            }
            at += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Mann–Whitney AUROC: `(#{pos above neg} + ½·#{tied pairs}) / (n_pos·n_neg)`.
/// Returns `None` when either sign is missing.
pub fn auroc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels must pair up");
    let n_pos = labels.iter().filter(|&&l| is_pos(l)).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Ascending walk: positives in a group beat every negative strictly
    // below the group and tie with negatives inside it.
    let mut order = descending_order(scores);
    order.reverse();
    let mut wins = 0.0f64;
    let mut negs_below = 0usize;
    let mut at = 0usize;
    while at < order.len() {
        let score = scores[order[at]];
        let mut group_pos = 0usize;
        let mut group_neg = 0usize;
        while at < order.len() && scores[order[at]] == score {
            if is_pos(labels[order[at]]) {
                group_pos += 1;
            } else {
                group_neg += 1;
            }
            at += 1;
        }
        wins += group_pos as f64 * negs_below as f64;
        wins += 0.5 * group_pos as f64 * group_neg as f64;
        negs_below += group_neg;
    }
    Some(wins / (n_pos as f64 * n_neg as f64))
}

/// Metrics for one class column.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub auprc: f64,
    pub auroc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Per-class and macro results for one evaluation. `per_class` holds the
/// evaluated classes only; `skipped` lists the rest, and the two always
/// partition `0..n_classes()`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_auprc: f64,
    pub macro_auroc: f64,
    pub skipped: Vec<usize>,
}

impl MetricReport {
    pub fn n_classes(&self) -> usize {
        self.per_class.len() + self.skipped.len()
    }

    /// Human-readable table, one row per class in index order.
    pub fn to_text(&self) -> String {
        let mut out = String::from("class   n_pos   n_neg     auprc     auroc\n");
        let mut evaluated = self.per_class.iter().peekable();
        for k in 0..self.n_classes() {
            if evaluated.peek().is_some_and(|m| m.class == k) {
                let m = evaluated.next().unwrap();
                out.push_str(&format!(
                    "{:>5} {:>7} {:>7}  {:>8.6}  {:>8.6}\n",
                    m.class, m.n_pos, m.n_neg, m.auprc, m.auroc
                ));
            } else {
                out.push_str(&format!("{k:>5} skipped (single-sign labels)\n"));
            }
        }
        out.push_str(&format!(
            "macro over {}/{} classes:  auprc {:.6}  auroc {:.6}\n",
            self.per_class.len(),
            self.n_classes(),
            self.macro_auprc,
            self.macro_auroc
        ));
        out
    }

    /// Machine-readable `key value` lines. Floats are printed in
    /// shortest-round-trip form, so nothing is lost to formatting.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("n_classes {}\n", self.n_classes()));
        out.push_str(&format!("n_evaluated {}\n", self.per_class.len()));
        out.push_str(&format!("macro_auprc {}\n", self.macro_auprc));
        out.push_str(&format!("macro_auroc {}\n", self.macro_auroc));
        if !self.skipped.is_empty() {
            let list: Vec<String> = self.skipped.iter().map(|k| k.to_string()).collect();
            out.push_str(&format!("skipped {}\n", list.join(",")));
        }
        for m in &self.per_class {
            out.push_str(&format!("class.{}.auprc {}\n", m.class, m.auprc));
            out.push_str(&format!("class.{}.auroc {}\n", m.class, m.auroc));
            out.push_str(&format!("class.{}.n_pos {}\n", m.class, m.n_pos));
            out.push_str(&format!("class.{}.n_neg {}\n", m.class, m.n_neg));
        }
        out
    }
}

/// Column-wise metrics over `[records, classes]` score and label
/// matrices. A class joins the macro means only when both metrics are
/// defined for it — at least one positive and one negative — so both
/// macros average exactly the same class set; everything else lands in
/// `skipped`. Errors if the shapes disagree or every class is skipped.
pub fn macro_report(scores: &Tensor, labels: &Tensor) -> MetricsResult<MetricReport> {
    if scores.shape() != labels.shape() {
        return Err(MetricsError::ShapeMismatch {
            scores: scores.shape().to_vec(),
            labels: labels.shape().to_vec(),
        });
    }
    if scores.shape().len() != 2 {
        return Err(MetricsError::NotAMatrix(scores.shape().to_vec()));
    }
    let (n, c) = (scores.shape()[0], scores.shape()[1]);
    let sdata = scores.data();
    let ldata = labels.data();

    let mut per_class = Vec::new();
    let mut skipped = Vec::new();
    let mut col_s = vec![0.0f64; n];
    let mut col_l = vec![0.0f64; n];
    for k in 0..c {
        for r in 0..n {
            col_s[r] = sdata[r * c + k];
            col_l[r] = ldata[r * c + k];
        }
        let n_pos = col_l.iter().filter(|&&l| is_pos(l)).count();
        match (average_precision(&col_s, &col_l), auroc(&col_s, &col_l)) {
            (Some(auprc), Some(au)) => per_class.push(ClassMetrics {
                class: k,
                auprc,
                auroc: au,
                n_pos,
                n_neg: n - n_pos,
            }),
            _ => skipped.push(k),
        }
    }
    if per_class.is_empty() {
        return Err(MetricsError::AllSkipped);
    }
    let m = per_class.len() as f64;
    Ok(MetricReport {
        macro_auprc: per_class.iter().map(|x| x.auprc).sum::<f64>() / m,
        macro_auroc: per_class.iter().map(|x| x.auroc).sum::<f64>() / m,
        per_class,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    /// Threshold-sweep AP: recount true/false positives from scratch at
    /// every distinct score. Quadratic, independent of the fast path.
    fn ap_oracle(scores: &[f64], labels: &[f64]) -> Option<f64> {
        let n_pos = labels.iter().filter(|&&l| l > 0.5).count();
        if n_pos == 0 {
            return None;
        }
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let mut ap = 0.0;
        let mut prev_r = 0.0;
        for &th in &thresholds {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|(s, l)| **s >= th && **l > 0.5)
                .count();
            let hits = scores.iter().filter(|&&s| s >= th).count();
            let r = tp as f64 / n_pos as f64;
            ap += (r - prev_r) * (tp as f64 / hits as f64);
            prev_r = r;
        }
        Some(ap)
    }

    /// Every (positive, negative) pair, counted directly.
    fn auroc_oracle(scores: &[f64], labels: &[f64]) -> Option<f64> {
        let pos: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l > 0.5)
            .map(|(s, _)| *s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l <= 0.5)
            .map(|(s, _)| *s)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut wins = 0.0;
        for &p in &pos {
            for &q in &neg {
                if p > q {
                    wins += 1.0;
                } else if p == q {
                    wins += 0.5;
                }
            }
        }
        Some(wins / (pos.len() as f64 * neg.len() as f64))
    }

    /// 200 seeded instances, half with coarse scores to force ties.
    fn random_instances() -> Vec<(Vec<f64>, Vec<f64>)> {
        (0..200u64)
            .map(|i| {
                let mut rng = rng_for(0xA11, i);
                let n = rng.gen_range(2..=50);
                let coarse = i % 2 == 0;
                let scores: Vec<f64> = (0..n)
                    .map(|_| {
                        if coarse {
                            rng.gen_range(0..8) as f64 / 4.0
                        } else {
                            rng.gen::<f64>()
                        }
                    })
                    .collect();
                let p = rng.gen_range(0.1..0.9);
                let mut labels: Vec<f64> =
                    (0..n).map(|_| f64::from(rng.gen::<f64>() < p)).collect();
                // Guarantee both signs so both metrics are defined.
                labels[0] = 1.0;
                labels[1] = 0.0;
                (scores, labels)
            })
            .collect()
    }

    #[test]
    fn ap_documented_example() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[1.0, 0.0, 1.0]).unwrap();
        assert!((ap - (0.5 * 1.0 + 0.5 * (2.0 / 3.0))).abs() < 1e-15);
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ap_perfect_ranking_is_one() {
        let ap = average_precision(&[0.9, 0.8, 0.3, 0.2], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(ap, 1.0);
    }

    #[test]
    fn ap_all_tied_is_prevalence() {
        for (p, n) in [(1usize, 4usize), (3, 7), (5, 5)] {
            let scores = vec![0.5; n];
            let labels: Vec<f64> = (0..n).map(|i| f64::from(i < p)).collect();
            let ap = average_precision(&scores, &labels).unwrap();
            assert!((ap - p as f64 / n as f64).abs() < 1e-15, "p={p} n={n}");
        }
    }

    #[test]
    fn undefined_inputs_give_none() {
        assert_eq!(average_precision(&[0.1, 0.2], &[0.0, 0.0]), None);
        assert_eq!(auroc(&[0.1, 0.2], &[0.0, 0.0]), None);
        assert_eq!(auroc(&[0.1, 0.2], &[1.0, 1.0]), None);
    }

    #[test]
    fn auroc_documented_example() {
        let v = auroc(&[0.9, 0.8, 0.1], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(v, 0.5); // (1 + 0) of 2 pairs
    }

    #[test]
    fn auroc_edges() {
        assert_eq!(auroc(&[0.9, 0.7, 0.2, 0.1], &[1.0, 1.0, 0.0, 0.0]), Some(1.0));
        assert_eq!(auroc(&[0.3; 5], &[1.0, 0.0, 1.0, 0.0, 0.0]), Some(0.5));
    }

    #[test]
    fn ap_matches_quadratic_oracle() {
        for (i, (scores, labels)) in random_instances().iter().enumerate() {
            let fast = average_precision(scores, labels).unwrap();
            let slow = ap_oracle(scores, labels).unwrap();
            assert!((fast - slow).abs() < 1e-12, "instance {i}: {fast} vs {slow}");
        }
    }

    #[test]
    fn auroc_matches_pair_enumeration_oracle() {
        for (i, (scores, labels)) in random_instances().iter().enumerate() {
            let fast = auroc(scores, labels).unwrap();
            let slow = auroc_oracle(scores, labels).unwrap();
            assert!((fast - slow).abs() < 1e-12, "instance {i}: {fast} vs {slow}");
        }
    }

    #[test]
    fn macro_report_on_perfect_predictions() {
        let scores = Tensor::from_vec(vec![0.9, 0.1, 0.8, 0.2, 0.1, 0.9, 0.2, 0.8], &[4, 2]).unwrap();
        let labels = Tensor::from_vec(vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0], &[4, 2]).unwrap();
        let rep = macro_report(&scores, &labels).unwrap();
        assert_eq!(rep.macro_auprc, 1.0);
        assert_eq!(rep.macro_auroc, 1.0);
        assert!(rep.skipped.is_empty());
        assert_eq!(rep.per_class.len(), 2);
        assert_eq!(rep.per_class[0].n_pos, 2);
        assert_eq!(rep.per_class[0].n_neg, 2);
    }

    #[test]
    fn skipped_class_is_excluded_from_the_mean() {
        // Class 1 has no positives: skipped, macro = class 0 alone.
        let scores = Tensor::from_vec(vec![0.9, 0.5, 0.1, 0.5, 0.8, 0.5], &[3, 2]).unwrap();
        let labels = Tensor::from_vec(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], &[3, 2]).unwrap();
        let rep = macro_report(&scores, &labels).unwrap();
        assert_eq!(rep.skipped, vec![1]);
        assert_eq!(rep.per_class.len(), 1);
        assert_eq!(rep.per_class[0].class, 0);
        assert_eq!(rep.macro_auprc, rep.per_class[0].auprc);
        assert_eq!(rep.macro_auroc, rep.per_class[0].auroc);
        assert_eq!(rep.n_classes(), 2);
    }

    #[test]
    fn degenerate_reports_are_errors() {
        let scores = Tensor::from_vec(vec![0.9, 0.1, 0.8, 0.2], &[2, 2]).unwrap();
        let all_neg = Tensor::from_vec(vec![0.0; 4], &[2, 2]).unwrap();
        assert!(matches!(
            macro_report(&scores, &all_neg),
            Err(MetricsError::AllSkipped)
        ));
        let bad = Tensor::from_vec(vec![0.0; 6], &[3, 2]).unwrap();
        assert!(matches!(
            macro_report(&scores, &bad),
            Err(MetricsError::ShapeMismatch { .. })
        ));
        let flat = Tensor::from_vec(vec![0.0; 4], &[4]).unwrap();
        assert!(matches!(
            macro_report(&flat, &flat),
            Err(MetricsError::NotAMatrix(_))
        ));
    }

    #[test]
    fn random_balanced_scores_sit_at_half() {
        let mut rng = rng_for(0xBA1A, 0);
        let n = 10_000usize;
        let c = 3usize;
        let scores: Vec<f64> = (0..n * c).map(|_| rng.gen()).collect();
        let labels: Vec<f64> = (0..n * c).map(|_| f64::from(rng.gen::<bool>())).collect();
        let rep = macro_report(
            &Tensor::from_vec(scores, &[n, c]).unwrap(),
            &Tensor::from_vec(labels, &[n, c]).unwrap(),
        )
        .unwrap();
        assert!(
            (rep.macro_auroc - 0.5).abs() < 0.02,
            "macro auroc {}",
            rep.macro_auroc
        );
    }

    #[test]
    fn report_export_layouts() {
        let scores = Tensor::from_vec(vec![0.9, 0.5, 0.1, 0.5, 0.8, 0.5], &[3, 2]).unwrap();
        let labels = Tensor::from_vec(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], &[3, 2]).unwrap();
        let rep = macro_report(&scores, &labels).unwrap();

        let text = rep.to_text();
        assert!(text.contains("class"), "{text}");
        assert!(text.contains("1 skipped"), "{text}");
        assert!(text.contains("macro over 1/2 classes"), "{text}");

        let kv = rep.to_kv();
        assert!(kv.contains("n_classes 2\n"), "{kv}");
        assert!(kv.contains("n_evaluated 1\n"), "{kv}");
        assert!(kv.contains("skipped 1\n"), "{kv}");
        assert!(kv.contains(&format!("macro_auprc {}\n", rep.macro_auprc)), "{kv}");
        assert!(kv.contains(&format!("class.0.auroc {}\n", rep.per_class[0].auroc)), "{kv}");
        // Shortest-round-trip float text parses back to the same bits.
        for line in kv.lines() {
            let (key, value) = line.split_once(' ').unwrap();
            if key.ends_with("auprc") || key.ends_with("auroc") {
                let v: f64 = value.parse().unwrap();
                if key == "macro_auprc" {
                    assert_eq!(v, rep.macro_auprc);
                }
            }
        }
    }

    /// Coarse-grid scores: strictly increasing transforms keep the tie
    /// structure exactly, so the metrics must not move at all.
    fn grid_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec((-64i32..=64).prop_map(|q| q as f64 / 16.0), n),
                proptest::collection::vec(any::<bool>().prop_map(f64::from), n),
            )
        })
    }

    proptest! {
        #[test]
        fn monotone_transforms_leave_metrics_fixed((scores, mut labels) in grid_case()) {
            labels[0] = 1.0;
            let at = labels.len() - 1;
            labels[at] = 0.0;
            let affine: Vec<f64> = scores.iter().map(|s| 2.0 * s + 1.0).collect();
            let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
            prop_assert_eq!(average_precision(&scores, &labels), average_precision(&affine, &labels));
            prop_assert_eq!(average_precision(&scores, &labels), average_precision(&squashed, &labels));
            prop_assert_eq!(auroc(&scores, &labels), auroc(&affine, &labels));
            prop_assert_eq!(auroc(&scores, &labels), auroc(&squashed, &labels));
        }

        #[test]
        fn metrics_stay_in_unit_interval((scores, mut labels) in grid_case()) {
            labels[0] = 1.0;
            let at = labels.len() - 1;
            labels[at] = 0.0;
            let ap = average_precision(&scores, &labels).unwrap();
            let au = auroc(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
            prop_assert!((0.0..=1.0).contains(&au));
        }

        #[test]
        fn auroc_of_negated_scores_complements(perm in Just(()).prop_flat_map(|_| {
            (3usize..30).prop_flat_map(|n| {
                (proptest::sample::subsequence((0..60).collect::<Vec<i32>>(), n), proptest::collection::vec(any::<bool>().prop_map(f64::from), n))
            })
        })) {
            // Distinct integers -> no ties anywhere.
            let (vals, mut labels) = perm;
            let scores: Vec<f64> = vals.iter().map(|&v| v as f64).collect();
            labels[0] = 1.0;
            let at = labels.len() - 1;
            labels[at] = 0.0;
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let a = auroc(&scores, &labels).unwrap();
            let b = auroc(&neg, &labels).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12, "{} + {} != 1", a, b);
        }
    }
}
