//! Train/test chrF distribution comparison and rank correlation.

use serde::{Deserialize, Serialize};

use crate::dataset::Manifest;
use crate::error::{Error, Result};

pub const N_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_left: f64,
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub held_out: String,
    pub bins: Vec<HistogramBin>,
    /// 1-Wasserstein distance between the two empirical distributions.
    pub wasserstein: f64,
    pub n_train: usize,
    pub n_test: usize,
}

impl DistributionReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("bin_left\ttrain_count\ttest_count\n");
        for b in &self.bins {
            out.push_str(&format!("{}\t{}\t{}\n", b.bin_left, b.train_count, b.test_count));
        }
        out
    }
}

fn bin_of(v: f64) -> usize {
    ((v * N_BINS as f64) as usize).min(N_BINS - 1)
}

/// Counts of `values` in 20 equal bins over `[0, 1]`; 1.0 falls in the
/// last bin.
pub fn histogram(values: &[f64]) -> [usize; N_BINS] {
    let mut counts = [0; N_BINS];
    for &v in values {
        counts[bin_of(v.clamp(0.0, 1.0))] += 1;
    }
    counts
}

/// Earth-mover distance between two empirical distributions: the integral
/// of `|F_a - F_b|` over the merged support.
pub fn wasserstein_1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyList);
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut dist = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        dist += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(dist)
}

/// Gold chrF values of the training pool (every other domain's training
/// sentences) and of the held-out domain's evaluation sentences, across
/// all labelled anchors.
pub fn distribution_report(manifest: &Manifest, held_out: &str) -> Result<DistributionReport> {
    let held = manifest
        .domain(held_out)
        .ok_or_else(|| Error::UnknownDomain(held_out.to_string()))?;
    let test: Vec<f64> = held
        .eval_sentences()
        .iter()
        .flat_map(|s| s.gold_chrf.values().copied())
        .collect();
    let train: Vec<f64> = manifest
        .domains
        .iter()
        .filter(|d| d.name != held_out)
        .flat_map(|d| d.training_sentences())
        .flat_map(|s| s.gold_chrf.values().copied())
        .collect();
    if test.is_empty() {
        return Err(Error::NoGoldLabels(held_out.to_string()));
    }
    if train.is_empty() {
        return Err(Error::NoGoldLabels("training pool".into()));
    }
    let (htr, hte) = (histogram(&train), histogram(&test));
    let bins = (0..N_BINS)
        .map(|k| HistogramBin {
            bin_left: k as f64 / N_BINS as f64,
            train_count: htr[k],
            test_count: hte[k],
        })
        .collect();
    Ok(DistributionReport {
        held_out: held_out.to_string(),
        bins,
        wasserstein: wasserstein_1(&train, &test)?,
        n_train: train.len(),
        n_test: test.len(),
    })
}

/// Ranks starting at 1, ties sharing their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut end = k + 1;
        while end < idx.len() && v[idx[end]] == v[idx[k]] {
            end += 1;
        }
        let rank = (k + end + 1) as f64 / 2.0;
        for &i in &idx[k..end] {
            out[i] = rank;
        }
        k = end;
    }
    out
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::EmptyList);
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fixtures;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// `W1 = integral |F_a - F_b|` evaluated on a fine grid.
    fn grid_oracle(a: &[f64], b: &[f64]) -> f64 {
        let cdf = |v: &[f64], t: f64| v.iter().filter(|&&x| x <= t).count() as f64 / v.len() as f64;
        let steps = 20_000;
        let (lo, hi) = (-0.01, 1.01);
        let h = (hi - lo) / steps as f64;
        (0..steps)
            .map(|k| {
                let t = lo + (k as f64 + 0.5) * h;
                (cdf(a, t) - cdf(b, t)).abs() * h
            })
            .sum()
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein_1(&[0.3, 0.5, 0.9], &[0.9, 0.3, 0.5]).unwrap(), 0.0);
        assert_abs_diff_eq!(wasserstein_1(&[0.2; 4], &[0.8; 7]).unwrap(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(wasserstein_1(&[0.0, 1.0], &[0.5]).unwrap(), 0.5, epsilon = 1e-12);
        assert!(wasserstein_1(&[], &[0.5]).is_err());
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 0.049, 0.05, 0.999, 1.0]);
        assert_eq!(h[0], 2);
        assert_eq!(h[1], 1);
        assert_eq!(h[N_BINS - 1], 2);
        assert_eq!(h.iter().sum::<usize>(), 5);
    }

    #[test]
    fn spearman_examples() {
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        // monotone transforms do not matter
        assert_abs_diff_eq!(spearman(&[1.0, 5.0, 2.0, 9.0], &[1.0, 125.0, 8.0, 729.0]).unwrap(), 1.0);
        assert_eq!(ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn report_on_fixture() {
        let m = fixtures::manifest();
        let r = distribution_report(&m, "law").unwrap();
        assert_eq!(r.bins.len(), N_BINS);
        assert_eq!(r.bins.iter().map(|b| b.train_count).sum::<usize>(), r.n_train);
        assert_eq!(r.bins.iter().map(|b| b.test_count).sum::<usize>(), r.n_test);
        assert!(r.to_tsv().starts_with("bin_left\ttrain_count\ttest_count\n"));
        assert_eq!(r.to_tsv().lines().count(), N_BINS + 1);
        assert!(matches!(distribution_report(&m, "nope"), Err(Error::UnknownDomain(_))));
    }

    #[test]
    fn missing_labels() {
        let mut m = fixtures::manifest();
        for s in &mut m.domains[0].sentences {
            s.gold_chrf.clear();
        }
        let name = m.domains[0].name.clone();
        assert!(matches!(distribution_report(&m, &name), Err(Error::NoGoldLabels(_))));
    }

    proptest! {
        #[test]
        fn matches_grid_oracle(
            a in prop::collection::vec(0.0f64..1.0, 1..15),
            b in prop::collection::vec(0.0f64..1.0, 1..15),
        ) {
            let w = wasserstein_1(&a, &b).unwrap();
            prop_assert!((w - grid_oracle(&a, &b)).abs() < 2e-3);
            prop_assert!((w - wasserstein_1(&b, &a).unwrap()).abs() < 1e-12);
        }
    }
}
