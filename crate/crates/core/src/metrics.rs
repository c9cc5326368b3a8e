//! Ranking and thresholded classification metrics.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub f_score: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// The five reported metrics, used for means and standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auc_roc: f64,
    pub auc_pr: f64,
    pub f_score: f64,
    pub precision: f64,
    pub recall: f64,
}

impl MetricSummary {
    fn from_eval(r: &EvalResult) -> Self {
        MetricSummary {
            auc_roc: r.auc_roc,
            auc_pr: r.auc_pr,
            f_score: r.f_score,
            precision: r.precision,
            recall: r.recall,
        }
    }

    fn to_array(self) -> [f64; 5] {
        [self.auc_roc, self.auc_pr, self.f_score, self.precision, self.recall]
    }

    fn from_array(a: [f64; 5]) -> Self {
        MetricSummary {
            auc_roc: a[0],
            auc_pr: a[1],
            f_score: a[2],
            precision: a[3],
            recall: a[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<EvalResult>,
    pub mean: MetricSummary,
    pub std: MetricSummary,
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let mut n_pos = 0;
    for &y in labels {
        match y {
            0 => {}
            1 => n_pos += 1,
            other => return Err(Error::Label(other)),
        }
    }
    Ok((n_pos, labels.len() - n_pos))
}

/// Indices sorted by descending score.
fn order_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Runs of equal score in descending order, as `(positives, negatives)`.
fn tie_groups(scores: &[f64], labels: &[u8]) -> Vec<(usize, usize)> {
    let order = order_desc(scores);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut tp, mut fp) = (0, 0);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        groups.push((tp, fp));
    }
    groups
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties counted as
/// one half.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("auc_roc needs both classes".into()));
    }
    // Walk groups from the highest score down; each positive beats every
    // negative that appears in a later group. Counting in half units keeps
    // the numerator an exact integer.
    let mut negatives_below = n_neg as u128;
    let mut twice_u: u128 = 0;
    for (tp, fp) in tie_groups(scores, labels) {
        negatives_below -= fp as u128;
        twice_u += tp as u128 * (2 * negatives_below + fp as u128);
    }
    Ok(twice_u as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

/// Average precision: recall-weighted precision at each tie group that
/// contains positives.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, _) = check_inputs(scores, labels)?;
    if n_pos == 0 {
        return Err(Error::Metric("auc_pr needs at least one positive".into()));
    }
    let (mut tp_cum, mut fp_cum) = (0usize, 0usize);
    let mut ap = 0.0;
    for (tp, fp) in tie_groups(scores, labels) {
        tp_cum += tp;
        fp_cum += fp;
        if tp > 0 {
            let precision = tp_cum as f64 / (tp_cum + fp_cum) as f64;
            ap += tp as f64 / n_pos as f64 * precision;
        }
    }
    Ok(ap)
}

pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// `(precision, recall, f_score)` with `score >= threshold` predicted positive.
pub fn prf_at_threshold(scores: &[f64], labels: &[u8], threshold: f64) -> Result<(f64, f64, f64)> {
    check_inputs(scores, labels)?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fneg > 0 { tp as f64 / (tp + fneg) as f64 } else { 0.0 };
    Ok((precision, recall, f_score(precision, recall)))
}

pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalResult> {
    let (n_pos, n_neg) = check_inputs(scores, labels)?;
    let (precision, recall, f) = prf_at_threshold(scores, labels, threshold)?;
    Ok(EvalResult {
        auc_roc: auc_roc(scores, labels)?,
        auc_pr: auc_pr(scores, labels)?,
        f_score: f,
        precision,
        recall,
        threshold,
        n_pos,
        n_neg,
    })
}

/// Arithmetic mean and population standard deviation per metric.
pub fn aggregate_runs(seeds: &[u64], results: &[EvalResult]) -> Result<RunReport> {
    if results.is_empty() {
        return Err(Error::Aggregation("no runs to aggregate".into()));
    }
    if seeds.len() != results.len() {
        return Err(Error::Aggregation(format!(
            "{} seeds for {} results",
            seeds.len(),
            results.len()
        )));
    }
    let n = results.len() as f64;
    let rows: Vec<[f64; 5]> = results.iter().map(|r| MetricSummary::from_eval(r).to_array()).collect();
    // Shift by the first run so identical runs give an exact zero spread.
    let origin = rows[0];
    let mut shift_mean = [0.0; 5];
    for row in &rows {
        for k in 0..5 {
            shift_mean[k] += row[k] - origin[k];
        }
    }
    shift_mean.iter_mut().for_each(|m| *m /= n);
    let mut var = [0.0; 5];
    for row in &rows {
        for k in 0..5 {
            var[k] += (row[k] - origin[k] - shift_mean[k]).powi(2);
        }
    }
    let mean: [f64; 5] = std::array::from_fn(|k| origin[k] + shift_mean[k]);
    let std = var.map(|v| (v / n).sqrt());
    Ok(RunReport {
        seeds: seeds.to_vec(),
        per_seed: results.to_vec(),
        mean: MetricSummary::from_array(mean),
        std: MetricSummary::from_array(std),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Rng;
    use proptest::prelude::*;

    fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    fn eval_with(auc_pr: f64, auc_roc: f64) -> EvalResult {
        EvalResult {
            auc_roc,
            auc_pr,
            f_score: 0.5,
            precision: 0.5,
            recall: 0.5,
            threshold: 0.5,
            n_pos: 1,
            n_neg: 1,
        }
    }

    #[test]
    fn auc_roc_cases() {
        assert_eq!(auc_roc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert_eq!(auc_roc(&[0.8, 0.4, 0.6, 0.2], &[1, 1, 0, 0]).unwrap(), 0.75);
        assert!(matches!(auc_roc(&[0.1, 0.2], &[1, 1]), Err(Error::Metric(_))));
    }

    #[test]
    fn auc_roc_matches_pairwise_oracle_exactly() {
        let mut rng = Rng::new(2024);
        for _ in 0..100 {
            let n = 2 + rng.below(199);
            // Coarse grid to force many ties.
            let scores: Vec<f64> = (0..n).map(|_| (rng.below(20) as f64) / 19.0).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.3) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            assert_eq!(auc_roc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
        }
    }

    #[test]
    fn auc_pr_cases() {
        assert_eq!(auc_pr(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc_pr(&[0.9, 0.1], &[0, 1]).unwrap(), 0.5);
        let labels = [1, 0, 0, 1, 0, 0, 0, 1, 0, 0];
        assert!((auc_pr(&[0.3; 10], &labels).unwrap() - 0.3).abs() < 1e-15);
        assert!(matches!(auc_pr(&[0.1], &[0]), Err(Error::Metric(_))));
    }

    #[test]
    fn prf_cases() {
        assert_eq!(prf_at_threshold(&[1.0, 0.0], &[1, 0], 0.5).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(prf_at_threshold(&[0.1, 0.2], &[1, 0], 0.5).unwrap(), (0.0, 0.0, 0.0));
        // TP = 2, FP = 1, FN = 2
        let (p, r, f) = prf_at_threshold(&[0.9, 0.8, 0.7, 0.1, 0.2], &[1, 1, 0, 1, 1], 0.5).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        assert!((r - 0.5).abs() < 1e-15);
        assert!((f - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_cases() {
        let same = vec![eval_with(0.7, 0.8); 3];
        let rep = aggregate_runs(&[1, 2, 3], &same).unwrap();
        assert_eq!(rep.std, MetricSummary::default());

        let rep = aggregate_runs(&[1, 2], &[eval_with(0.5, 0.8), eval_with(0.5, 0.9)]).unwrap();
        assert!((rep.mean.auc_roc - 0.85).abs() < 1e-12);
        assert!((rep.std.auc_roc - 0.05).abs() < 1e-12);

        assert!(matches!(aggregate_runs(&[], &[]), Err(Error::Aggregation(_))));
    }

    #[test]
    fn aggregate_matches_hand_rolled() {
        let mut rng = Rng::new(5);
        let results: Vec<EvalResult> = (0..5).map(|_| eval_with(rng.uniform(), rng.uniform())).collect();
        let rep = aggregate_runs(&[1, 2, 3, 4, 5], &results).unwrap();
        let xs: Vec<f64> = results.iter().map(|r| r.auc_pr).collect();
        let m = (xs[0] + xs[1] + xs[2] + xs[3] + xs[4]) / 5.0;
        let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 5.0).sqrt();
        assert!((rep.mean.auc_pr - m).abs() < 1e-12);
        assert!((rep.std.auc_pr - sd).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranker() {
        let scores = [0.9, 0.8, 0.3, 0.2, 0.1];
        let labels = [1, 1, 0, 0, 0];
        let r = evaluate(&scores, &labels, 0.5).unwrap();
        assert_eq!((r.auc_roc, r.auc_pr, r.f_score), (1.0, 1.0, 1.0));
        assert_eq!((r.n_pos, r.n_neg), (2, 3));
    }

    proptest! {
        #[test]
        fn reversed_ranking_complements(raw in proptest::collection::vec(0u32..1_000_000, 2..60), flips in proptest::collection::vec(any::<bool>(), 60)) {
            let mut scores: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
            scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
            scores.dedup();
            prop_assume!(scores.len() >= 2);
            let mut labels: Vec<u8> = flips.iter().take(scores.len()).map(|&b| b as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let rev: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
            let a = auc_roc(&scores, &labels).unwrap();
            let b = auc_roc(&rev, &labels).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn invariant_under_monotone_transform(ints in proptest::collection::vec(-50i32..50, 2..80), flips in proptest::collection::vec(any::<bool>(), 80)) {
            // Integer-valued scores so the transform cannot merge distinct values.
            let raw: Vec<f64> = ints.iter().map(|&v| f64::from(v)).collect();
            let mut labels: Vec<u8> = flips.iter().take(raw.len()).map(|&b| b as u8).collect();
            labels[0] = 0;
            labels[1] = 1;
            let moved: Vec<f64> = raw.iter().map(|s| s * s * s + 5.0 * s + 7.0).collect();
            prop_assert_eq!(auc_roc(&raw, &labels).unwrap(), auc_roc(&moved, &labels).unwrap());
            prop_assert_eq!(auc_pr(&raw, &labels).unwrap(), auc_pr(&moved, &labels).unwrap());
        }
    }
}
