//! Synthetic domains with a known quality model.
//!
//! Every domain is driven by a few latent knobs: a vocabulary mix (share of
//! general-vocabulary tokens, Zipf exponent, sentence length), a learning
//! curve `c - exp(-a ln(1+n) + b)` and a mean sentence difficulty. Each
//! sentence draws a latent difficulty `u ~ N(shift, 1)` that sets its mean
//! token negative log-likelihood `l = L0 + L_SCALE * u`; the decode trace is
//! built so that `-mean(ln p1)` equals `l` exactly, and the gold chrF is
//!
//! ```text
//! clamp(c - exp(-a ln(1+n) + b) - kappa * (l - L0) + eps, 0, 1)
//! ```
//!
//! so instance features carry the per-sentence offset by construction.
//! Encoder rows are hashed token embeddings plus a domain-signature
//! direction and a difficulty direction, which makes the encoder
//! representation informative as well.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, Zipf};
use serde::{Deserialize, Serialize};

use crate::curvefit::{exp3_eval, Exp3Params};
use crate::dataset::{AnchorSize, DecodeStep, DomainEntry, Manifest, SampleStats, SentenceRecord, Split};
use crate::error::{Error, Result};
use crate::features::GeneralVocab;

/// Center of the per-sentence mean token NLL.
pub const L0: f64 = 0.35;
/// NLL change per unit of latent difficulty.
pub const L_SCALE: f64 = 0.12;
const L_RANGE: (f64, f64) = (0.02, 1.2);
/// Outcomes sharing the probability mass left over by the top two.
const TAIL_OUTCOMES: f64 = 50.0;
const EMBED_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    /// Size of the domain-specific vocabulary.
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    /// Probability that a token comes from the general vocabulary.
    pub general_share: f64,
    pub mean_length: f64,
    pub curve: Exp3Params,
    /// Mean of the latent sentence difficulty.
    pub difficulty_shift: f64,
    /// Strength of the domain-signature direction in encoder rows.
    pub signature: f64,
}

impl DomainSpec {
    /// A domain whose every property moves monotonically with `rho`;
    /// `rho` in `[0, 1]` spans the benchmark domains, values outside that
    /// range give shifted domains. The curve starts at `0.60 - 0.25 rho`
    /// and gains `0.17 - 0.08 rho` by 100k sentences, roughly the range of
    /// real general-to-domain adaptation gains.
    pub fn from_latent(name: impl Into<String>, rho: f64) -> Self {
        let start = 0.60 - 0.25 * rho;
        let gain = (0.17 - 0.08 * rho).max(0.01);
        let a = (0.08 + 0.04 * rho).max(0.02);
        let scale = gain / (1.0 - (-a * (100_001f64).ln()).exp());
        Self {
            name: name.into(),
            vocab_size: 2000 + (3000.0 * rho.max(0.0)) as usize,
            zipf_exponent: 1.1,
            general_share: (0.9 - 0.5 * rho).clamp(0.05, 0.95),
            mean_length: 10.0 + 8.0 * rho.max(-1.0),
            curve: Exp3Params {
                a,
                b: scale.ln(),
                c: (start + scale).clamp(0.0, 1.0),
            },
            difficulty_shift: 1.5 * (rho - 0.5),
            signature: rho,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub domains: Vec<DomainSpec>,
    pub general_vocab_size: usize,
    pub general_zipf_exponent: f64,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    pub encoder_dim: usize,
    /// Standard deviation of the independent per-label noise.
    pub noise_std: f64,
    /// Weight of the difficulty offset; 0 makes every offset vanish.
    pub difficulty_weight: f64,
    /// Nested source-sample sizes registered per domain.
    pub sample_sizes: Vec<AnchorSize>,
    /// Anchor sizes that receive gold labels.
    pub label_sizes: Vec<AnchorSize>,
    pub seed: u64,
}

pub const BENCHMARK_LATENTS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const SHIFTED_LATENT: f64 = 1.6;

impl SyntheticSpec {
    /// Five domains of 1000 dev and 1000 test sentences, samples at
    /// 1k/3k/10k/20k/100k and labels additionally at 3k and 160k.
    pub fn benchmark(seed: u64) -> Self {
        Self {
            domains: BENCHMARK_LATENTS
                .iter()
                .enumerate()
                .map(|(i, &rho)| DomainSpec::from_latent(format!("dom{i}"), rho))
                .collect(),
            general_vocab_size: 5000,
            general_zipf_exponent: 1.1,
            dev_sentences: 1000,
            test_sentences: 1000,
            encoder_dim: 8,
            noise_std: 0.03,
            difficulty_weight: 2.0 / 3.0,
            sample_sizes: vec![1000, 3000, 10_000, 20_000, 100_000],
            label_sizes: vec![0, 1000, 3000, 10_000, 20_000, 100_000, 160_000],
            seed,
        }
    }

    /// The benchmark with its last domain replaced by one far outside the
    /// latent range of the others, named `shifted`.
    pub fn shifted(seed: u64) -> Self {
        let mut spec = Self::benchmark(seed);
        let last = spec.domains.len() - 1;
        spec.domains[last] = DomainSpec::from_latent("shifted", SHIFTED_LATENT);
        spec
    }

    /// Two tiny domains for tests and smoke runs.
    pub fn small(seed: u64) -> Self {
        Self {
            domains: vec![DomainSpec::from_latent("law", 0.2), DomainSpec::from_latent("it", 0.8)],
            general_vocab_size: 300,
            general_zipf_exponent: 1.1,
            dev_sentences: 30,
            test_sentences: 30,
            encoder_dim: 4,
            noise_std: 0.02,
            difficulty_weight: 2.0 / 3.0,
            sample_sizes: vec![100, 300, 1000],
            label_sizes: vec![0, 100, 300, 1000],
            seed,
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "benchmark" => Ok(Self::benchmark(seed)),
            "shifted" => Ok(Self::shifted(seed)),
            "small" => Ok(Self::small(seed)),
            other => Err(Error::InvalidSpec(format!(
                "unknown preset {other:?} (expected benchmark, shifted or small)"
            ))),
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.domains.is_empty() {
            return bad("at least one domain is required".into());
        }
        if self.encoder_dim == 0 || self.general_vocab_size == 0 {
            return bad("encoder_dim and general_vocab_size must be positive".into());
        }
        if self.dev_sentences + self.test_sentences == 0 {
            return bad("every domain needs sentences".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be finite and >= 0", self.noise_std));
        }
        if !self.difficulty_weight.is_finite() || !(self.general_zipf_exponent > 0.0) {
            return bad("difficulty_weight must be finite and the general Zipf exponent positive".into());
        }
        if self.sample_sizes.contains(&0) {
            return bad("sample sizes must be positive".into());
        }
        let mut names = std::collections::HashSet::new();
        for d in &self.domains {
            if !names.insert(d.name.as_str()) || d.name.is_empty() {
                return bad(format!("domain name {:?} is empty or repeated", d.name));
            }
            if !(0.0..=1.0).contains(&d.curve.c) {
                return bad(format!("{}: curve c = {} outside [0, 1]", d.name, d.curve.c));
            }
            let finite = [d.curve.a, d.curve.b, d.difficulty_shift, d.signature, d.mean_length]
                .iter()
                .all(|v| v.is_finite());
            if !finite
                || d.vocab_size == 0
                || !(d.zipf_exponent > 0.0)
                || !(0.0..=1.0).contains(&d.general_share)
                || !(d.mean_length >= 1.0)
            {
                return bad(format!("{}: invalid domain parameters", d.name));
            }
        }
        Ok(())
    }
}

/// FNV-1a, used to derive deterministic token embeddings.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hashed embedding of `token` with components in `[-1, 1)`.
fn token_embedding(token: &str, d: usize) -> Vec<f64> {
    let h = fnv1a(token.as_bytes());
    (0..d)
        .map(|j| {
            let v = splitmix(h ^ (j as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
            (v >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

/// Alternating-sign unit direction, offset so that two offsets differ.
fn direction(d: usize, offset: usize) -> Vec<f64> {
    let norm = (d as f64).sqrt();
    (0..d)
        .map(|j| if (j + offset).is_multiple_of(3) { -1.0 } else { 1.0 } / norm)
        .collect()
}

struct TokenSource {
    general: Zipf<f64>,
    domain: Zipf<f64>,
    general_share: f64,
    length: Poisson<f64>,
}

/// A token drawn from the general (`true`) or domain vocabulary, by rank.
#[derive(Clone, Copy)]
struct Token {
    general: bool,
    rank: usize,
}

impl TokenSource {
    fn new(spec: &SyntheticSpec, d: &DomainSpec) -> Result<Self> {
        let zipf = |n: usize, s: f64| Zipf::new(n as f64, s).map_err(|e| Error::InvalidSpec(e.to_string()));
        Ok(Self {
            general: zipf(spec.general_vocab_size, spec.general_zipf_exponent)?,
            domain: zipf(d.vocab_size, d.zipf_exponent)?,
            general_share: d.general_share,
            length: Poisson::new(d.mean_length - 1.0)
                .or_else(|_| Poisson::new(1e-9))
                .map_err(|e| Error::InvalidSpec(e.to_string()))?,
        })
    }

    fn sentence(&self, rng: &mut ChaCha8Rng) -> Vec<Token> {
        let len = 1 + self.length.sample(rng) as usize;
        (0..len)
            .map(|_| {
                if rng.random::<f64>() < self.general_share {
                    Token {
                        general: true,
                        rank: self.general.sample(rng) as usize - 1,
                    }
                } else {
                    Token {
                        general: false,
                        rank: self.domain.sample(rng) as usize - 1,
                    }
                }
            })
            .collect()
    }
}

fn general_token(rank: usize) -> String {
    format!("w{rank}")
}

fn domain_token(domain: &str, rank: usize) -> String {
    format!("{domain}_{rank}")
}

fn token_text(domain: &str, t: Token) -> String {
    if t.general {
        general_token(t.rank)
    } else {
        domain_token(domain, t.rank)
    }
}

fn digits(mut n: usize) -> u64 {
    let mut k = 1;
    while n >= 10 {
        n /= 10;
        k += 1;
    }
    k
}

/// Statistics of nested prefixes of one token stream, one per size.
fn nested_samples(
    source: &TokenSource,
    domain: &str,
    sizes: &[AnchorSize],
    general_vocab_size: usize,
    vocab_size: usize,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<AnchorSize, SampleStats> {
    let mut sizes: Vec<AnchorSize> = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let mut seen_general = vec![false; general_vocab_size];
    let mut seen_domain = vec![false; vocab_size];
    let mut st = SampleStats::default();
    let mut out = BTreeMap::new();
    let domain_prefix = domain.chars().count() as u64 + 1;
    let mut next = 0;
    while next < sizes.len() {
        let sent = source.sentence(rng);
        st.n_instances += 1;
        st.n_tokens += sent.len() as u64;
        st.n_chars += sent.len() as u64 - 1;
        for t in sent {
            if t.general {
                st.n_chars += 1 + digits(t.rank);
                if !seen_general[t.rank] {
                    seen_general[t.rank] = true;
                    st.n_unique += 1;
                    st.n_unique_in_general += 1;
                }
            } else {
                st.n_chars += domain_prefix + digits(t.rank);
                if !seen_domain[t.rank] {
                    seen_domain[t.rank] = true;
                    st.n_unique += 1;
                }
            }
        }
        while next < sizes.len() && st.n_instances == sizes[next] {
            out.insert(sizes[next], st);
            next += 1;
        }
    }
    out
}

fn entropy_of(p1: f64, p2: f64) -> f64 {
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    let rest = (1.0 - p1 - p2).max(0.0);
    let tail = if rest > 0.0 {
        -rest * (rest / TAIL_OUTCOMES).ln()
    } else {
        0.0
    };
    term(p1) + term(p2) + tail
}

/// Decode trace of `len` steps whose mean `ln p1` is exactly `-nll`.
fn decode_trace(nll: f64, len: usize, rng: &mut ChaCha8Rng) -> Vec<DecodeStep> {
    let r: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
    let mean_r = r.iter().sum::<f64>() / len as f64;
    r.iter()
        .map(|&ri| {
            let p1 = (-nll * (1.0 - 0.5 * (ri - mean_r))).exp();
            let p2 = ((1.0 - p1) * rng.random_range(0.3..0.9)).min(p1);
            DecodeStep {
                p1,
                p2,
                entropy: entropy_of(p1, p2),
            }
        })
        .collect()
}

/// Source and hypothesis sentence embeddings at an angle that widens with
/// `nll`.
fn embeddings(nll: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect::<Vec<_>>()
    };
    let src = unit((0..EMBED_DIM).map(|_| normal.sample(rng)).collect());
    let raw: Vec<f64> = (0..EMBED_DIM).map(|_| normal.sample(rng)).collect();
    let dot: f64 = raw.iter().zip(&src).map(|(a, b)| a * b).sum();
    let orth = unit(raw.iter().zip(&src).map(|(a, b)| a - dot * b).collect());
    let theta = (0.2 + 0.8 * nll).min(1.5);
    let hyp = src
        .iter()
        .zip(&orth)
        .map(|(s, o)| theta.cos() * s + theta.sin() * o)
        .collect();
    (src, hyp)
}

/// Gold chrF of a sentence with difficulty offset `delta` at anchor `n`,
/// before noise.
pub fn noiseless_gold(curve: &Exp3Params, delta: f64, n: AnchorSize) -> f64 {
    (exp3_eval(curve, n) + delta).clamp(0.0, 1.0)
}

fn domain_entry(spec: &SyntheticSpec, idx: usize) -> Result<DomainEntry> {
    let dspec = &spec.domains[idx];
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(spec.seed ^ splitmix(idx as u64 + 1)));
    let source = TokenSource::new(spec, dspec)?;
    let d = spec.encoder_dim;
    let sig_dir = direction(d, 0);
    let diff_dir = direction(d, 1);
    let difficulty = Normal::new(dspec.difficulty_shift, 1.0).expect("unit sd");
    let noise = Normal::new(0.0, spec.noise_std).expect("checked noise");
    let row_noise = Normal::new(0.0, 0.05).expect("positive sd");
    let mut embed_cache: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    let total = spec.dev_sentences + spec.test_sentences;
    let mut sentences = Vec::with_capacity(total);
    for i in 0..total {
        let split = if i < spec.dev_sentences {
            Split::Dev
        } else {
            Split::Test
        };
        let toks: Vec<String> = source
            .sentence(&mut rng)
            .into_iter()
            .map(|t| token_text(&dspec.name, t))
            .collect();
        let u = difficulty.sample(&mut rng);
        let nll = (L0 + L_SCALE * u).clamp(L_RANGE.0, L_RANGE.1);
        let delta = -spec.difficulty_weight * (nll - L0);

        let mut rep = Array2::<f32>::zeros((toks.len(), d));
        for (t, tok) in toks.iter().enumerate() {
            let e = embed_cache
                .entry(tok.clone())
                .or_insert_with(|| token_embedding(tok, d));
            for j in 0..d {
                let v = 0.5 * e[j] + dspec.signature * sig_dir[j] + 0.4 * u * diff_dir[j] + row_noise.sample(&mut rng);
                rep[[t, j]] = v as f32;
            }
        }
        let trace = decode_trace(nll, toks.len(), &mut rng);
        let (src, hyp) = embeddings(nll, &mut rng);
        let gold_chrf = spec
            .label_sizes
            .iter()
            .map(|&n| {
                let eps = if spec.noise_std > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                (n, (noiseless_gold(&dspec.curve, delta, n) + eps).clamp(0.0, 1.0))
            })
            .collect();
        sentences.push(SentenceRecord {
            id: format!(
                "{}-{}-{i:05}",
                dspec.name,
                if split == Split::Dev { "dev" } else { "test" }
            ),
            split,
            tokens: toks,
            encoder_rep: Arc::new(rep),
            decode_trace: trace,
            labse_src: Some(src),
            labse_hyp: Some(hyp),
            gold_chrf,
        });
    }
    let samples = nested_samples(
        &source,
        &dspec.name,
        &spec.sample_sizes,
        spec.general_vocab_size,
        dspec.vocab_size,
        &mut rng,
    );
    Ok(DomainEntry {
        name: dspec.name.clone(),
        sentences,
        samples,
        gold_curve: None,
    })
}

/// Builds a complete, valid manifest from `spec`. Identical specs give
/// identical manifests.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Manifest> {
    spec.check()?;
    let domains = (0..spec.domains.len())
        .map(|i| domain_entry(spec, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Manifest {
        tensor_dim: spec.encoder_dim,
        general_vocab: Some(GeneralVocab::new((0..spec.general_vocab_size).map(general_token))),
        domains,
    })
}
