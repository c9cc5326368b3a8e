use serde::{Deserialize, Serialize};

use crate::diffcore::Rng;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Apportions `total` by `ratios`: floors first, then the leftover units go
/// to the largest fractional parts, ties to the earlier ratio.
pub fn largest_remainder(total: usize, ratios: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = ratios.iter().map(|r| r * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

fn class_indices(labels: &[u8]) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, &y) in labels.iter().enumerate() {
        match y {
            0 => neg.push(i),
            1 => pos.push(i),
            other => return Err(Error::Label(other)),
        }
    }
    Ok((pos, neg))
}

/// Stratified train/validation/test split.
///
/// Split sizes follow the largest-remainder rule on `N`; positives are
/// apportioned first by the same rule and negatives fill the rest. Each
/// class is shuffled before allocation. Index lists are returned sorted.
pub fn stratified_split(labels: &[u8], ratios: [f64; 3], rng: &mut Rng) -> Result<SplitIndices> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Param(format!("split ratios must be in [0,1] and sum to 1, got {ratios:?}")));
    }
    let (mut pos, mut neg) = class_indices(labels)?;
    if pos.len() < 3 || neg.len() < 3 {
        return Err(Error::Stratification(format!(
            "each class needs at least 3 members, got {} positive / {} negative",
            pos.len(),
            neg.len()
        )));
    }
    let totals = largest_remainder(labels.len(), &ratios);
    let pos_counts = largest_remainder(pos.len(), &ratios);
    let neg_counts: Vec<usize> = if totals.iter().zip(&pos_counts).all(|(t, p)| t >= p) {
        totals.iter().zip(&pos_counts).map(|(t, p)| t - p).collect()
    } else {
        largest_remainder(neg.len(), &ratios)
    };

    rng.shuffle(&mut pos);
    rng.shuffle(&mut neg);
    let mut parts: [Vec<usize>; 3] = Default::default();
    let (mut pi, mut ni) = (0, 0);
    for k in 0..3 {
        parts[k].extend_from_slice(&pos[pi..pi + pos_counts[k]]);
        parts[k].extend_from_slice(&neg[ni..ni + neg_counts[k]]);
        pi += pos_counts[k];
        ni += neg_counts[k];
        parts[k].sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(SplitIndices { train, val, test })
}

/// Nested stratified subsets of a training split.
///
/// Each class is permuted once; the subset for fraction `f` takes the
/// leading `round(f · n_class)` members of each permutation, so smaller
/// fractions are always contained in larger ones.
#[derive(Debug, Clone)]
pub struct NestedSubsampler {
    pos: Vec<usize>,
    neg: Vec<usize>,
}

impl NestedSubsampler {
    /// `indices` are positions into the full cohort and `labels` the full
    /// cohort's labels.
    pub fn new(indices: &[usize], labels: &[u8], rng: &mut Rng) -> Result<Self> {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for &i in indices {
            match labels[i] {
                1 => pos.push(i),
                0 => neg.push(i),
                other => return Err(Error::Label(other)),
            }
        }
        rng.shuffle(&mut pos);
        rng.shuffle(&mut neg);
        Ok(NestedSubsampler { pos, neg })
    }

    pub fn take(&self, fraction: f64) -> Result<Vec<usize>> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Subsample(format!("fraction must be in (0, 1], got {fraction}")));
        }
        let n_pos = (fraction * self.pos.len() as f64).round() as usize;
        let n_neg = (fraction * self.neg.len() as f64).round() as usize;
        if n_pos == 0 || n_neg == 0 {
            return Err(Error::Subsample(format!(
                "fraction {fraction} leaves {n_pos} positive / {n_neg} negative samples"
            )));
        }
        let mut out: Vec<usize> = self.pos[..n_pos].iter().chain(&self.neg[..n_neg]).copied().collect();
        out.sort_unstable();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, n_pos: usize) -> Vec<u8> {
        (0..n).map(|i| u8::from(i < n_pos)).collect()
    }

    fn positives(idx: &[usize], labels: &[u8]) -> usize {
        idx.iter().filter(|&&i| labels[i] == 1).count()
    }

    #[test]
    fn exact_proportions() {
        let y = labels(100, 10);
        let s = stratified_split(&y, [0.6, 0.2, 0.2], &mut Rng::new(1)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 20, 20));
        assert_eq!((positives(&s.train, &y), positives(&s.val, &y), positives(&s.test, &y)), (6, 2, 2));
    }

    #[test]
    fn same_seed_same_split() {
        let y = labels(300, 40);
        let a = stratified_split(&y, [0.6, 0.2, 0.2], &mut Rng::new(9)).unwrap();
        let b = stratified_split(&y, [0.6, 0.2, 0.2], &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn largest_remainder_sizes() {
        assert_eq!(largest_remainder(4983, &[0.6, 0.2, 0.2]), vec![2990, 997, 996]);
        let y = labels(4983, 287);
        let s = stratified_split(&y, [0.6, 0.2, 0.2], &mut Rng::new(3)).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (2990, 997, 996));
    }

    #[test]
    fn partition_and_fraction_invariants() {
        for (n, p, seed) in [(4983, 287, 1), (1000, 60, 2), (57, 9, 3), (4000, 240, 4)] {
            let y = labels(n, p);
            let s = stratified_split(&y, [0.6, 0.2, 0.2], &mut Rng::new(seed)).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            let global = p as f64 / n as f64;
            for part in [&s.train, &s.val, &s.test] {
                let expected = global * part.len() as f64;
                assert!((positives(part, &y) as f64 - expected).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn tiny_class_is_rejected() {
        let y = labels(50, 2);
        assert!(matches!(
            stratified_split(&y, [0.6, 0.2, 0.2], &mut Rng::new(0)),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn bad_ratios_rejected() {
        let y = labels(50, 10);
        assert!(stratified_split(&y, [0.6, 0.3, 0.2], &mut Rng::new(0)).is_err());
    }

    #[test]
    fn subsamples_are_nested_and_full_fraction_is_identity() {
        let y = labels(200, 30);
        let train: Vec<usize> = (0..200).step_by(2).collect();
        let sub = NestedSubsampler::new(&train, &y, &mut Rng::new(5)).unwrap();
        let quarter = sub.take(0.25).unwrap();
        let half = sub.take(0.5).unwrap();
        let full = sub.take(1.0).unwrap();
        assert!(quarter.iter().all(|i| half.contains(i)));
        assert!(half.iter().all(|i| full.contains(i)));
        assert_eq!(full, train);
        assert!(positives(&half, &y) > 0);
    }

    #[test]
    fn subsample_that_empties_a_class_fails() {
        let y = labels(100, 3);
        let idx: Vec<usize> = (0..100).collect();
        let sub = NestedSubsampler::new(&idx, &y, &mut Rng::new(5)).unwrap();
        assert!(matches!(sub.take(0.1), Err(Error::Subsample(_))));
        assert!(sub.take(0.0).is_err());
    }
}
