//! In-memory data model shared by every other module, plus its on-disk
//! forms: the JSONL manifest ([`manifest`]) and `DLC1` tensor records
//! ([`tensor`]).

pub mod manifest;
pub mod tensor;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::features::GeneralVocab;

pub use manifest::{load_manifest, write_manifest};
pub use tensor::{read_tensor_record, write_tensor_record};

/// Anchor size: number of in-domain sentences the NMT model was adapted on.
/// `0` is the unadapted baseline model.
pub type AnchorSize = u64;

/// Row-major `T x d` encoder representation of one sentence.
pub type EncoderRep = Array2<f32>;

/// Sufficient statistics of one greedy decoding step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct DecodeStep {
    /// Probability of the emitted (greedy) token.
    pub p1: f64,
    /// Second-highest probability at this step.
    pub p2: f64,
    /// Entropy of the full output distribution, in nats.
    pub entropy: f64,
}

impl From<[f64; 3]> for DecodeStep {
    fn from([p1, p2, entropy]: [f64; 3]) -> Self {
        Self { p1, p2, entropy }
    }
}

impl From<DecodeStep> for [f64; 3] {
    fn from(s: DecodeStep) -> Self {
        [s.p1, s.p2, s.entropy]
    }
}

/// Which held-out split of a domain a sentence belongs to. Predictor
/// training draws on `Dev`; evaluation on `Test`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Dev,
    #[default]
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceRecord {
    pub id: String,
    pub split: Split,
    pub tokens: Vec<String>,
    pub encoder_rep: Arc<EncoderRep>,
    pub decode_trace: Vec<DecodeStep>,
    pub labse_src: Option<Vec<f64>>,
    pub labse_hyp: Option<Vec<f64>>,
    /// Sentence-level chrF of the model adapted at each anchor size.
    pub gold_chrf: BTreeMap<AnchorSize, f64>,
}

/// Mean chrF per anchor size, gold or predicted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LearningCurve(pub BTreeMap<AnchorSize, f64>);

impl LearningCurve {
    pub fn get(&self, size: AnchorSize) -> Option<f64> {
        self.0.get(&size).copied()
    }

    pub fn sizes(&self) -> impl Iterator<Item = AnchorSize> + '_ {
        self.0.keys().copied()
    }
}

impl FromIterator<(AnchorSize, f64)> for LearningCurve {
    fn from_iter<I: IntoIterator<Item = (AnchorSize, f64)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Counts summarizing a source-side in-domain sample; everything the
/// corpus-level features need.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub n_instances: u64,
    pub n_tokens: u64,
    /// Characters of the space-joined sentences, spaces included.
    pub n_chars: u64,
    pub n_unique: u64,
    /// Unique sample tokens that also occur in the general vocabulary.
    pub n_unique_in_general: u64,
}

impl SampleStats {
    pub fn from_sentences<S: AsRef<str>>(sentences: &[Vec<S>], general: &GeneralVocab) -> Self {
        let mut stats = SampleStats::default();
        let mut seen: HashSet<&str> = HashSet::new();
        for sent in sentences {
            stats.n_instances += 1;
            stats.n_tokens += sent.len() as u64;
            let chars: usize = sent.iter().map(|t| t.as_ref().chars().count()).sum();
            stats.n_chars += (chars + sent.len().saturating_sub(1)) as u64;
            for tok in sent {
                if seen.insert(tok.as_ref()) && general.contains(tok.as_ref()) {
                    stats.n_unique_in_general += 1;
                }
            }
        }
        stats.n_unique = seen.len() as u64;
        stats
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainEntry {
    pub name: String,
    pub sentences: Vec<SentenceRecord>,
    /// Source-side sample statistics per anchor size (`S_{n,d}`).
    pub samples: BTreeMap<AnchorSize, SampleStats>,
    pub gold_curve: Option<LearningCurve>,
}

impl DomainEntry {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &SentenceRecord> {
        self.sentences.iter().filter(move |s| s.split == split)
    }

    /// Sentences used to train predictors: the dev split, or every sentence
    /// when the domain carries no split annotation.
    pub fn training_sentences(&self) -> Vec<&SentenceRecord> {
        let dev: Vec<_> = self.split(Split::Dev).collect();
        if dev.is_empty() {
            self.sentences.iter().collect()
        } else {
            dev
        }
    }

    /// Sentences a held-out evaluation scores: the test split, or every
    /// sentence when the domain carries no split annotation.
    pub fn eval_sentences(&self) -> Vec<&SentenceRecord> {
        let test: Vec<_> = self.split(Split::Test).collect();
        if test.is_empty() {
            self.sentences.iter().collect()
        } else {
            test
        }
    }

    /// Gold mean chrF per anchor: the stored curve if present, otherwise the
    /// mean of the evaluation sentences' labels.
    pub fn gold_mean_curve(&self) -> LearningCurve {
        if let Some(curve) = &self.gold_curve {
            return curve.clone();
        }
        let mut sums: BTreeMap<AnchorSize, (f64, usize)> = BTreeMap::new();
        for s in self.eval_sentences() {
            for (&n, &v) in &s.gold_chrf {
                let e = sums.entry(n).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        sums.into_iter().map(|(n, (s, c))| (n, s / c as f64)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub tensor_dim: usize,
    pub general_vocab: Option<GeneralVocab>,
    pub domains: Vec<DomainEntry>,
}

impl Manifest {
    pub fn domain(&self, name: &str) -> Option<&DomainEntry> {
        self.domains.iter().find(|d| d.name == name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub record: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.record, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, record: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            record: record.to_string(),
            message: message.into(),
        });
    }
}

/// Lists every invariant violation in `m`. An empty report means the data
/// set is consistent.
pub fn validate_dataset(m: &Manifest) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut names = HashSet::new();
    if m.tensor_dim == 0 {
        report.push("manifest", "tensor_dim must be positive");
    }
    if let Some(g) = &m.general_vocab {
        if g.is_empty() {
            report.push("manifest", "general vocabulary is empty");
        }
    }
    for dom in &m.domains {
        if !names.insert(dom.name.as_str()) {
            report.push(&dom.name, "duplicate domain name");
        }
        let mut ids = HashSet::new();
        for s in &dom.sentences {
            if !ids.insert(s.id.as_str()) {
                report.push(&s.id, "duplicate sentence id");
            }
            validate_sentence(s, m.tensor_dim, &mut report);
        }
        for (&n, st) in &dom.samples {
            let rec = format!("{}/sample-{n}", dom.name);
            if n == 0 {
                report.push(&rec, "sample registered for the 0 anchor");
            }
            if st.n_instances == 0 || st.n_tokens == 0 {
                report.push(&rec, "empty sample");
            } else if st.n_unique > st.n_tokens || st.n_unique_in_general > st.n_unique {
                report.push(&rec, "sample counts inconsistent");
            }
        }
        if let Some(curve) = &dom.gold_curve {
            for (n, v) in &curve.0 {
                let rec = format!("{}/gold-{n}", dom.name);
                if !(0.0..=1.0).contains(v) {
                    report.push(&rec, "chrf out of range");
                }
                if dom.sentences.is_empty() || dom.sentences.iter().any(|s| !s.gold_chrf.contains_key(n)) {
                    report.push(&rec, "gold anchor lacks per-sentence labels");
                }
            }
        }
    }
    report
}

fn validate_sentence(s: &SentenceRecord, dim: usize, report: &mut ValidationReport) {
    let (rows, cols) = s.encoder_rep.dim();
    if rows == 0 {
        report.push(&s.id, "encoder matrix has no rows");
    } else if rows != s.tokens.len() {
        report.push(
            &s.id,
            format!("encoder rows ({rows}) differ from token count ({})", s.tokens.len()),
        );
    }
    if cols != dim {
        report.push(&s.id, format!("encoder width {cols} differs from tensor_dim {dim}"));
    }
    if s.encoder_rep.iter().any(|v| !v.is_finite()) {
        report.push(&s.id, "non-finite encoder value");
    }
    if s.decode_trace.is_empty() {
        report.push(&s.id, "empty decode trace");
    }
    for (i, st) in s.decode_trace.iter().enumerate() {
        let rec = format!("{}/step-{i}", s.id);
        if !(st.p1 > 0.0 && st.p1 <= 1.0) {
            report.push(&rec, "p1 out of range");
        }
        if st.p2 < 0.0 {
            report.push(&rec, "p2 negative");
        } else if st.p2 > st.p1 {
            report.push(&rec, "p2 exceeds p1");
        } else if st.p1 + st.p2 > 1.0 + 1e-9 {
            report.push(&rec, "p1 + p2 exceeds 1");
        }
        if !(st.entropy >= 0.0) {
            report.push(&rec, "negative entropy");
        }
    }
    for (n, v) in &s.gold_chrf {
        if !(0.0..=1.0).contains(v) {
            report.push(&format!("{}/chrf-{n}", s.id), "chrf out of range");
        }
    }
    match (&s.labse_src, &s.labse_hyp) {
        (Some(a), Some(b)) if a.len() != b.len() => report.push(&s.id, "sentence embedding dimensions differ"),
        (Some(_), None) | (None, Some(_)) => report.push(&s.id, "only one sentence embedding present"),
        _ => {}
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn sentence(id: &str, tokens: &[&str], dim: usize) -> SentenceRecord {
        let t = tokens.len();
        SentenceRecord {
            id: id.to_string(),
            split: Split::Test,
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            encoder_rep: Arc::new(Array2::from_shape_fn((t, dim), |(i, j)| (i * dim + j) as f32 * 0.1)),
            decode_trace: vec![
                DecodeStep {
                    p1: 0.9,
                    p2: 0.05,
                    entropy: 0.4,
                },
                DecodeStep {
                    p1: 0.6,
                    p2: 0.3,
                    entropy: 1.0,
                },
            ],
            labse_src: Some(vec![1.0, 0.0]),
            labse_hyp: Some(vec![1.0, 1.0]),
            gold_chrf: [(0, 0.4), (1000, 0.5)].into_iter().collect(),
        }
    }

    pub fn manifest() -> Manifest {
        let general = GeneralVocab::new(["a", "b", "x"]);
        let dom = |name: &str| DomainEntry {
            name: name.to_string(),
            sentences: vec![
                sentence(&format!("{name}-0"), &["a", "b"], 4),
                sentence(&format!("{name}-1"), &["a", "c", "d"], 4),
            ],
            samples: [(
                1000,
                SampleStats::from_sentences(&[vec!["a", "b"], vec!["a", "c", "d"]], &general),
            )]
            .into_iter()
            .collect(),
            gold_curve: Some([(0, 0.4), (1000, 0.5)].into_iter().collect()),
        };
        Manifest {
            tensor_dim: 4,
            general_vocab: Some(general.clone()),
            domains: vec![dom("law"), dom("it")],
        }
    }
}
