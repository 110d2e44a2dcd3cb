//! Instance difficulty features, corpus-level sample features and the
//! min-max pooled encoder vector.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnchorSize, DecodeStep, SampleStats, SentenceRecord};
use crate::error::{Error, Result};

/// Vocabulary of the general (pre-adaptation) training corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralVocab(BTreeSet<String>);

impl GeneralVocab {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self(tokens.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> Vec<&str> {
        self.0.iter().map(String::as_str).collect()
    }
}

pub const DF_NAMES: [&str; 4] = ["lc", "margin", "entropy", "xsim"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceFeatures {
    pub least_confidence: f64,
    pub margin: f64,
    pub avg_entropy: f64,
    pub xsim: f64,
    /// False when the record had no sentence embeddings and `xsim` is the
    /// placeholder 0.
    pub xsim_present: bool,
}

impl InstanceFeatures {
    pub fn from_record(rec: &SentenceRecord) -> Result<Self> {
        let (xsim_value, xsim_present) = match (&rec.labse_src, &rec.labse_hyp) {
            (Some(a), Some(b)) => (xsim(a, b)?, true),
            _ => (0.0, false),
        };
        Ok(Self {
            least_confidence: least_confidence(&rec.decode_trace)?,
            margin: margin_score(&rec.decode_trace)?,
            avg_entropy: avg_token_entropy(&rec.decode_trace)?,
            xsim: xsim_value,
            xsim_present,
        })
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.least_confidence, self.margin, self.avg_entropy, self.xsim]
    }
}

/// One minus the geometric-mean probability of the greedy tokens.
pub fn least_confidence(trace: &[DecodeStep]) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut log_sum = 0.0;
    for s in trace {
        if !(s.p1 > 0.0) {
            return Err(Error::NonPositiveProbability(s.p1));
        }
        log_sum += s.p1.ln();
    }
    Ok(1.0 - (log_sum / trace.len() as f64).exp())
}

pub fn margin_score(trace: &[DecodeStep]) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(trace.iter().map(|s| s.p1 - s.p2).sum::<f64>() / trace.len() as f64)
}

/// Mean per-step entropy, in nats.
pub fn avg_token_entropy(trace: &[DecodeStep]) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(trace.iter().map(|s| s.entropy).sum::<f64>() / trace.len() as f64)
}

/// Cosine similarity of a source and a translation embedding.
pub fn xsim(src: &[f64], hyp: &[f64]) -> Result<f64> {
    if src.len() != hyp.len() {
        return Err(Error::DimensionMismatch {
            record: "xsim".into(),
            expected: src.len(),
            found: hyp.len(),
        });
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(src), norm(hyp));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dot: f64 = src.iter().zip(hyp).map(|(a, b)| a * b).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub const CORPUS_NAMES: [&str; 7] = [
    "n_instances",
    "n_tokens",
    "overlap",
    "avg_len_chars",
    "avg_len_tokens",
    "n_unique",
    "ttr",
];

/// Log-scaled (`ln(1 + v)`) description of a source-side in-domain sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusFeatures {
    pub n_instances: f64,
    pub n_tokens: f64,
    pub vocab_overlap: f64,
    pub avg_len_chars: f64,
    pub avg_len_tokens: f64,
    pub n_unique_tokens: f64,
    pub type_token_ratio: f64,
}

/// The untransformed quantities behind [`CorpusFeatures`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawCorpusFeatures {
    pub n_instances: f64,
    pub n_tokens: f64,
    pub vocab_overlap: f64,
    pub avg_len_chars: f64,
    pub avg_len_tokens: f64,
    pub n_unique_tokens: f64,
    pub type_token_ratio: f64,
}

impl RawCorpusFeatures {
    pub fn from_stats(st: &SampleStats) -> Result<Self> {
        if st.n_instances == 0 || st.n_tokens == 0 {
            return Err(Error::EmptySample);
        }
        let n = st.n_instances as f64;
        let tokens = st.n_tokens as f64;
        let unique = st.n_unique as f64;
        Ok(Self {
            n_instances: n,
            n_tokens: tokens,
            vocab_overlap: st.n_unique_in_general as f64 / unique,
            avg_len_chars: st.n_chars as f64 / n,
            avg_len_tokens: tokens / n,
            n_unique_tokens: unique,
            type_token_ratio: unique / tokens,
        })
    }

    pub fn log_scaled(&self) -> CorpusFeatures {
        CorpusFeatures {
            n_instances: self.n_instances.ln_1p(),
            n_tokens: self.n_tokens.ln_1p(),
            vocab_overlap: self.vocab_overlap.ln_1p(),
            avg_len_chars: self.avg_len_chars.ln_1p(),
            avg_len_tokens: self.avg_len_tokens.ln_1p(),
            n_unique_tokens: self.n_unique_tokens.ln_1p(),
            type_token_ratio: self.type_token_ratio.ln_1p(),
        }
    }
}

impl CorpusFeatures {
    /// Features of the 0 anchor: no in-domain sample, every raw value 0.
    pub fn zero_anchor() -> Self {
        Self::default()
    }

    pub fn from_stats(st: &SampleStats) -> Result<Self> {
        Ok(RawCorpusFeatures::from_stats(st)?.log_scaled())
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.n_instances,
            self.n_tokens,
            self.vocab_overlap,
            self.avg_len_chars,
            self.avg_len_tokens,
            self.n_unique_tokens,
            self.type_token_ratio,
        ]
    }
}

pub fn corpus_features<S: AsRef<str>>(sample: &[Vec<S>], general: &GeneralVocab) -> Result<CorpusFeatures> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    CorpusFeatures::from_stats(&SampleStats::from_sentences(sample, general))
}

/// Vocabulary growth `V = k * N^beta` (Heaps' law) in the number of tokens.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeapsLaw {
    pub k: f64,
    pub beta: f64,
}

impl HeapsLaw {
    /// Least-squares fit in log-log space over `(n_tokens, n_unique)` pairs.
    /// Needs two distinct token counts.
    pub fn fit(points: &[(f64, f64)]) -> Option<Self> {
        let pts: Vec<(f64, f64)> = points
            .iter()
            .filter(|(n, v)| *n > 0.0 && *v > 0.0)
            .map(|&(n, v)| (n.ln(), v.ln()))
            .collect();
        if pts.len() < 2 {
            return None;
        }
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        if sxx < 1e-12 {
            return None;
        }
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let beta = sxy / sxx;
        Some(Self {
            k: (my - beta * mx).exp(),
            beta,
        })
    }

    pub fn vocab(&self, n_tokens: f64) -> f64 {
        self.k * n_tokens.powf(self.beta)
    }
}

/// Raw features for a sample of `size` sentences larger than every
/// available sample. Counts scale with the size ratio, the unique-token
/// count follows a Heaps-law fit over the available samples, and the ratio
/// features stay at the largest sample's values.
pub fn extrapolate_raw(samples: &BTreeMap<AnchorSize, SampleStats>, size: AnchorSize) -> Result<RawCorpusFeatures> {
    let (&largest, st) = samples
        .iter()
        .rfind(|(&n, st)| n > 0 && st.n_instances > 0)
        .ok_or(Error::MissingSample(size))?;
    if size <= largest {
        return Err(Error::MissingSample(size));
    }
    let base = RawCorpusFeatures::from_stats(st)?;
    let ratio = size as f64 / st.n_instances.max(1) as f64;
    let n_tokens = base.n_tokens * ratio;
    let points: Vec<(f64, f64)> = samples
        .values()
        .map(|s| (s.n_tokens as f64, s.n_unique as f64))
        .collect();
    let n_unique = HeapsLaw::fit(&points)
        .map(|h| h.vocab(n_tokens))
        .unwrap_or(base.n_unique_tokens)
        .max(base.n_unique_tokens);
    Ok(RawCorpusFeatures {
        n_instances: base.n_instances * ratio,
        n_tokens,
        n_unique_tokens: n_unique,
        ..base
    })
}

/// Corpus features for anchor `size`: all zeros for the 0 anchor, the
/// registered sample's statistics when there is one, otherwise an
/// extrapolation past the largest sample if `extrapolate` is set.
pub fn resolve_corpus_features(
    samples: &BTreeMap<AnchorSize, SampleStats>,
    size: AnchorSize,
    extrapolate: bool,
) -> Result<CorpusFeatures> {
    if size == 0 {
        return Ok(CorpusFeatures::zero_anchor());
    }
    if let Some(st) = samples.get(&size) {
        return CorpusFeatures::from_stats(st);
    }
    if extrapolate {
        return Ok(extrapolate_raw(samples, size)?.log_scaled());
    }
    Err(Error::MissingSample(size))
}

/// Column-wise minima followed by column-wise maxima, length `2d`.
pub fn minmax_pool(rep: &Array2<f32>) -> Result<Vec<f64>> {
    let (rows, cols) = rep.dim();
    if rows == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut out = vec![0.0; 2 * cols];
    for (j, col) in rep.columns().into_iter().enumerate() {
        let (lo, hi) = col.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        out[j] = lo as f64;
        out[cols + j] = hi as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn steps(p: &[(f64, f64)]) -> Vec<DecodeStep> {
        p.iter().map(|&(p1, p2)| DecodeStep { p1, p2, entropy: 0.0 }).collect()
    }

    #[test]
    fn least_confidence_examples() {
        assert_abs_diff_eq!(least_confidence(&steps(&[(1.0, 0.0), (1.0, 0.0)])).unwrap(), 0.0);
        assert_abs_diff_eq!(
            least_confidence(&steps(&[(0.5, 0.1), (0.5, 0.1)])).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            least_confidence(&steps(&[(0.9, 0.0), (0.4, 0.0)])).unwrap(),
            0.4,
            epsilon = 1e-12
        );
        assert!(matches!(least_confidence(&[]), Err(Error::EmptyTrace)));
        assert!(matches!(
            least_confidence(&steps(&[(0.0, 0.0)])),
            Err(Error::NonPositiveProbability(_))
        ));
    }

    #[test]
    fn margin_examples() {
        assert_abs_diff_eq!(margin_score(&steps(&[(0.9, 0.05)])).unwrap(), 0.85, epsilon = 1e-12);
        assert_abs_diff_eq!(
            margin_score(&steps(&[(0.9, 0.05), (0.6, 0.3)])).unwrap(),
            0.575,
            epsilon = 1e-12
        );
        assert_eq!(margin_score(&steps(&[(0.5, 0.5)])).unwrap(), 0.0);
        assert!(matches!(margin_score(&[]), Err(Error::EmptyTrace)));
    }

    #[test]
    fn entropy_examples() {
        let e = |h: &[f64]| -> Vec<DecodeStep> {
            h.iter()
                .map(|&entropy| DecodeStep {
                    p1: 0.5,
                    p2: 0.1,
                    entropy,
                })
                .collect()
        };
        let ln4 = 4f64.ln();
        assert_abs_diff_eq!(avg_token_entropy(&e(&[ln4])).unwrap(), 1.386294, epsilon = 1e-6);
        assert_eq!(avg_token_entropy(&e(&[0.0])).unwrap(), 0.0);
        assert_abs_diff_eq!(avg_token_entropy(&e(&[ln4, 0.0])).unwrap(), 0.693147, epsilon = 1e-6);
    }

    #[test]
    fn xsim_examples() {
        assert_abs_diff_eq!(
            xsim(&[0.3, -2.0, 1.0], &[0.3, -2.0, 1.0]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(xsim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(xsim(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), 0.707107, epsilon = 1e-6);
        assert!(matches!(xsim(&[0.0, 0.0], &[1.0, 1.0]), Err(Error::ZeroVector)));
        assert!(matches!(
            xsim(&[1.0], &[1.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn corpus_feature_counts() {
        let g = GeneralVocab::new(["a", "b", "x"]);
        let sample = vec![vec!["a", "b"], vec!["a", "c", "d"]];
        let raw = RawCorpusFeatures::from_stats(&SampleStats::from_sentences(&sample, &g)).unwrap();
        assert_eq!(raw.n_instances, 2.0);
        assert_eq!(raw.n_tokens, 5.0);
        assert_eq!(raw.avg_len_tokens, 2.5);
        assert_eq!(raw.avg_len_chars, 4.0);
        assert_eq!(raw.n_unique_tokens, 4.0);
        assert_eq!(raw.type_token_ratio, 0.8);
        assert_eq!(raw.vocab_overlap, 0.5);
        let cf = corpus_features(&sample, &g).unwrap();
        assert_abs_diff_eq!(cf.vocab_overlap, 1.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(cf.n_instances, 3f64.ln(), epsilon = 1e-15);

        let single =
            RawCorpusFeatures::from_stats(&SampleStats::from_sentences(&[vec!["a"]], &GeneralVocab::new(["a"])))
                .unwrap();
        assert_eq!(
            (single.n_instances, single.type_token_ratio, single.vocab_overlap),
            (1.0, 1.0, 1.0)
        );

        let empty: Vec<Vec<&str>> = vec![];
        assert!(matches!(corpus_features(&empty, &g), Err(Error::EmptySample)));
        assert_eq!(CorpusFeatures::zero_anchor().to_array(), [0.0; 7]);
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(
            minmax_pool(&array![[1.0f32, 2.0], [3.0, 0.0]]).unwrap(),
            vec![1.0, 0.0, 3.0, 2.0]
        );
        assert_eq!(minmax_pool(&array![[5.0f32, 6.0]]).unwrap(), vec![5.0, 6.0, 5.0, 6.0]);
        assert_eq!(minmax_pool(&Array2::zeros((3, 2))).unwrap(), vec![0.0; 4]);
        assert!(matches!(minmax_pool(&Array2::zeros((0, 2))), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn heaps_fit_and_extrapolation() {
        let law = HeapsLaw { k: 3.0, beta: 0.6 };
        let pts: Vec<(f64, f64)> = [1e3, 1e4, 1e5].iter().map(|&n| (n, law.vocab(n))).collect();
        let fit = HeapsLaw::fit(&pts).unwrap();
        assert_abs_diff_eq!(fit.k, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.beta, 0.6, epsilon = 1e-12);
        assert!(HeapsLaw::fit(&pts[..1]).is_none());

        let stats = |n: u64| SampleStats {
            n_instances: n,
            n_tokens: 10 * n,
            n_chars: 50 * n,
            n_unique: law.vocab(10.0 * n as f64).round() as u64,
            n_unique_in_general: law.vocab(10.0 * n as f64).round() as u64 / 2,
        };
        let samples: BTreeMap<_, _> = [(1000, stats(1000)), (10000, stats(10000))].into();
        let raw = extrapolate_raw(&samples, 40000).unwrap();
        assert_eq!(raw.n_instances, 40000.0);
        assert_eq!(raw.n_tokens, 400000.0);
        assert_abs_diff_eq!(
            raw.n_unique_tokens,
            law.vocab(400000.0),
            epsilon = law.vocab(4e5) * 1e-3
        );
        assert_eq!(raw.avg_len_tokens, 10.0);
        let last = RawCorpusFeatures::from_stats(&samples[&10000]).unwrap();
        assert_eq!(raw.type_token_ratio, last.type_token_ratio);
        assert_eq!(raw.vocab_overlap, last.vocab_overlap);

        assert_eq!(
            resolve_corpus_features(&samples, 0, false).unwrap(),
            CorpusFeatures::zero_anchor()
        );
        assert!(matches!(
            resolve_corpus_features(&samples, 40000, false),
            Err(Error::MissingSample(40000))
        ));
        assert!(matches!(
            resolve_corpus_features(&samples, 3000, true),
            Err(Error::MissingSample(3000))
        ));
        assert_eq!(
            resolve_corpus_features(&samples, 1000, false).unwrap(),
            CorpusFeatures::from_stats(&samples[&1000]).unwrap()
        );
    }

    proptest! {
        #[test]
        fn minmax_halves_ordered(rows in 1usize..6, cols in 1usize..5, seed in proptest::collection::vec(-5.0f32..5.0, 30)) {
            let m = Array2::from_shape_fn((rows, cols), |(i, j)| seed[(i * cols + j) % seed.len()]);
            let v = minmax_pool(&m).unwrap();
            for j in 0..cols {
                prop_assert!(v[j] <= v[cols + j]);
            }
        }

        #[test]
        fn trace_means_ignore_order(mut ps in proptest::collection::vec((0.01f64..1.0, 0.0f64..1.0), 1..10)) {
            let tr = |ps: &[(f64, f64)]| -> Vec<DecodeStep> {
                ps.iter().map(|&(p1, f)| DecodeStep { p1, p2: p1 * f * 0.5, entropy: f }).collect()
            };
            let a = tr(&ps);
            ps.reverse();
            let b = tr(&ps);
            prop_assert!((least_confidence(&a).unwrap() - least_confidence(&b).unwrap()).abs() < 1e-12);
            prop_assert!((margin_score(&a).unwrap() - margin_score(&b).unwrap()).abs() < 1e-12);
            let lc = least_confidence(&a).unwrap();
            prop_assert!((0.0..1.0).contains(&lc));
        }

        #[test]
        fn overlap_extremes(tokens in proptest::collection::vec("[a-f]{1,3}", 1..12)) {
            let sample = vec![tokens.clone()];
            let all = GeneralVocab::new(tokens.iter().cloned());
            let none = GeneralVocab::new(["ZZZ"]);
            let raw_all = RawCorpusFeatures::from_stats(&SampleStats::from_sentences(&sample, &all)).unwrap();
            let raw_none = RawCorpusFeatures::from_stats(&SampleStats::from_sentences(&sample, &none)).unwrap();
            prop_assert_eq!(raw_all.vocab_overlap, 1.0);
            prop_assert_eq!(raw_none.vocab_overlap, 0.0);
        }
    }
}
