//! The instance-level learning-curve predictor.
//!
//! A sentence's encoder representation (`T x d`) is pooled by a bank of
//! 1-D convolutions (one per window size, `channels_per_window` output
//! channels each) followed by max-over-time. The pooled vector, the
//! z-normalized difficulty features and the corpus features of the
//! in-domain sample are concatenated and fed to `fusion_layers` ReLU layers
//! and a final sigmoid unit, giving a predicted sentence-level chrF.
//! A learning curve is the mean prediction over a test set for each
//! sample size.

mod io;
mod train;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2, ShapeBuilder};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnchorSize, EncoderRep, LearningCurve, SampleStats, SentenceRecord};
use crate::error::{Error, Result};
use crate::features::{self, CorpusFeatures, InstanceFeatures, CORPUS_NAMES, DF_NAMES};

pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC};
pub use train::{mse_loss, mse_loss_and_gradients, train, EpochLog, TrainingInstance, TrainingLog};

pub const N_DF: usize = 4;
pub const N_CORPUS: usize = 7;

/// Input slots zeroed at the fusion layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    DropDf,
    DropCorpus,
    DropEncoder,
    /// A single difficulty or corpus feature, by name (`lc`, `margin`,
    /// `entropy`, `xsim`, `n_instances`, ..., `ttr`).
    DropFeature(String),
}

impl Ablation {
    /// Parses `df`, `corpus`, `enc` or a feature name.
    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "df" => Ablation::DropDf,
            "corpus" => Ablation::DropCorpus,
            "enc" | "encoder" | "nmtenc" => Ablation::DropEncoder,
            other => {
                let canonical = match other {
                    "least_confidence" => "lc",
                    "ms" => "margin",
                    "ate" | "avg_entropy" => "entropy",
                    "overlap" | "vocab_overlap" => "overlap",
                    x => x,
                };
                if !DF_NAMES.contains(&canonical) && !CORPUS_NAMES.contains(&canonical) {
                    return Err(Error::InvalidConfig(format!("unknown feature to drop: {s}")));
                }
                Ablation::DropFeature(canonical.to_string())
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            Ablation::DropDf => "df".into(),
            Ablation::DropCorpus => "corpus".into(),
            Ablation::DropEncoder => "enc".into(),
            Ablation::DropFeature(n) => n.clone(),
        }
    }
}

/// How the max-pooled outputs of the convolution windows are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMerge {
    /// One block of channels per window, side by side.
    #[default]
    Concat,
    /// Element-wise sum over windows.
    Sum,
}

impl PoolMerge {
    /// Merges per-window pooled vectors laid out back to back.
    pub fn apply(self, pooled: Vec<f64>, channels: usize) -> Vec<f64> {
        match self {
            PoolMerge::Concat => pooled,
            PoolMerge::Sum => {
                let mut out = vec![0.0; channels];
                for block in pooled.chunks(channels) {
                    for (o, v) in out.iter_mut().zip(block) {
                        *o += v;
                    }
                }
                out
            }
        }
    }

    /// Position of window `window`, channel `c` in the merged vector.
    pub fn slot(self, window: usize, c: usize, channels: usize) -> usize {
        match self {
            PoolMerge::Concat => window * channels + c,
            PoolMerge::Sum => c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub encoder_dim: usize,
    pub window_sizes: Vec<usize>,
    pub channels_per_window: usize,
    pub fusion_hidden: usize,
    pub fusion_layers: usize,
    pub lr: f64,
    pub lr_decay_per_epoch: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    /// Fraction of sentences held out for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub ablations: Vec<Ablation>,
    #[serde(default)]
    pub pool_merge: PoolMerge,
}

impl NetConfig {
    pub fn new(encoder_dim: usize) -> Self {
        Self {
            encoder_dim,
            window_sizes: vec![2, 3, 4],
            channels_per_window: encoder_dim,
            fusion_hidden: 512,
            fusion_layers: 4,
            lr: 1e-3,
            lr_decay_per_epoch: 0.97,
            batch_size: 256,
            patience: 10,
            max_epochs: 500,
            val_fraction: 0.2,
            seed: 0,
            ablations: Vec::new(),
            pool_merge: PoolMerge::Concat,
        }
    }

    pub fn check(&self) -> Result<()> {
        let positive = self.encoder_dim > 0
            && !self.window_sizes.is_empty()
            && self.window_sizes.iter().all(|&w| w >= 1)
            && self.channels_per_window > 0
            && self.fusion_hidden > 0
            && self.fusion_layers > 0
            && self.lr > 0.0
            && self.lr_decay_per_epoch > 0.0
            && self.batch_size > 0
            && self.patience > 0
            && self.max_epochs > 0
            && self.val_fraction > 0.0
            && self.val_fraction < 1.0;
        if positive {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad network config {self:?}")))
        }
    }

    pub fn pooled_dim(&self) -> usize {
        match self.pool_merge {
            PoolMerge::Concat => self.window_sizes.len() * self.channels_per_window,
            PoolMerge::Sum => self.channels_per_window,
        }
    }

    /// Pooled encoder vector of one padded sentence.
    pub(crate) fn pool(&self, padded: &Array2<f64>, filters: &[ConvFilter]) -> Vec<f64> {
        self.pool_merge
            .apply(conv_pool(padded, filters).0, self.channels_per_window)
    }

    pub fn fusion_input_dim(&self) -> usize {
        self.pooled_dim() + N_DF + N_CORPUS
    }

    pub fn max_window(&self) -> usize {
        self.window_sizes.iter().copied().max().unwrap_or(1)
    }

    /// 1.0 for live fusion inputs, 0.0 for ablated ones.
    pub fn input_mask(&self) -> Vec<f64> {
        let p = self.pooled_dim();
        let mut mask = vec![1.0; self.fusion_input_dim()];
        for ab in &self.ablations {
            match ab {
                Ablation::DropEncoder => mask[..p].fill(0.0),
                Ablation::DropDf => mask[p..p + N_DF].fill(0.0),
                Ablation::DropCorpus => mask[p + N_DF..].fill(0.0),
                Ablation::DropFeature(name) => {
                    if let Some(i) = DF_NAMES.iter().position(|n| n == name) {
                        mask[p + i] = 0.0;
                    } else if let Some(i) = CORPUS_NAMES.iter().position(|n| n == name) {
                        mask[p + N_DF + i] = 0.0;
                    }
                }
            }
        }
        mask
    }
}

/// One convolution window: `weight` is `channels x (window * d)`, applied to
/// `window` consecutive rows flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFilter {
    pub window: usize,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Fully connected layer, `weight` is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetWeights {
    pub conv: Vec<ConvFilter>,
    pub fusion: Vec<Dense>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}

impl NetWeights {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    pub fn init(cfg: &NetConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.encoder_dim;
        let conv = cfg
            .window_sizes
            .iter()
            .map(|&w| {
                let bound = 1.0 / ((w * d) as f64).sqrt();
                ConvFilter {
                    window: w,
                    weight: uniform(rng, (cfg.channels_per_window, w * d), bound),
                    bias: uniform(rng, (1, cfg.channels_per_window), bound).row(0).to_owned(),
                }
            })
            .collect();
        let mut fusion = Vec::with_capacity(cfg.fusion_layers + 1);
        let mut fan_in = cfg.fusion_input_dim();
        for layer in 0..=cfg.fusion_layers {
            let out = if layer == cfg.fusion_layers {
                1
            } else {
                cfg.fusion_hidden
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            fusion.push(Dense {
                weight: uniform(rng, (out, fan_in), bound),
                bias: uniform(rng, (1, out), bound).row(0).to_owned(),
            });
            fan_in = out;
        }
        Self { conv, fusion }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv: self
                .conv
                .iter()
                .map(|f| ConvFilter {
                    window: f.window,
                    weight: Array2::zeros(f.weight.raw_dim()),
                    bias: Array1::zeros(f.bias.len()),
                })
                .collect(),
            fusion: self
                .fusion
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    /// Every weight tensor as a flat slice, in serialization order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for f in &self.conv {
            out.push(f.weight.as_slice().expect("standard layout"));
            out.push(f.bias.as_slice().expect("standard layout"));
        }
        for l in &self.fusion {
            out.push(l.weight.as_slice().expect("standard layout"));
            out.push(l.bias.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for f in &mut self.conv {
            out.push(f.weight.as_slice_mut().expect("standard layout"));
            out.push(f.bias.as_slice_mut().expect("standard layout"));
        }
        for l in &mut self.fusion {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Per-feature mean and standard deviation of the difficulty features over
/// the training set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DfNormalization {
    pub mean: [f64; N_DF],
    pub std: [f64; N_DF],
}

impl Default for DfNormalization {
    fn default() -> Self {
        Self {
            mean: [0.0; N_DF],
            std: [1.0; N_DF],
        }
    }
}

impl DfNormalization {
    pub fn fit<'a>(features: impl IntoIterator<Item = &'a InstanceFeatures>) -> Self {
        let rows: Vec<[f64; N_DF]> = features.into_iter().map(|f| f.to_array()).collect();
        if rows.is_empty() {
            return Self::default();
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; N_DF];
        let mut std = [0.0; N_DF];
        for r in &rows {
            for k in 0..N_DF {
                mean[k] += r[k] / n;
            }
        }
        for r in &rows {
            for k in 0..N_DF {
                std[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, df: &InstanceFeatures) -> [f64; N_DF] {
        let raw = df.to_array();
        std::array::from_fn(|k| (raw[k] - self.mean[k]) / self.std[k])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorModel {
    pub config: NetConfig,
    pub weights: NetWeights,
    pub df_norm: DfNormalization,
}

/// Right-pads `rep` with zero rows up to `min_len` and widens to f64.
pub(crate) fn padded(rep: &EncoderRep, min_len: usize) -> Array2<f64> {
    let (t, d) = rep.dim();
    let len = t.max(min_len);
    let mut out = Array2::zeros((len, d));
    out.slice_mut(ndarray::s![..t, ..]).assign(&rep.mapv(f64::from));
    out
}

/// Rows `t..t+window` of a standard-layout matrix, each flattened, as one
/// overlapping view: row `t` of the result is the window starting at `t`.
pub(crate) fn windows_view(padded: &Array2<f64>, window: usize) -> ArrayView2<'_, f64> {
    let (len, d) = padded.dim();
    let n = len + 1 - window;
    let data = padded.as_slice().expect("standard layout");
    ArrayView2::from_shape((n, window * d).strides((d, 1)), data).expect("window view fits buffer")
}

/// Convolution outputs max-pooled over time, plus the winning time step of
/// each channel (first one on ties).
pub(crate) fn conv_pool(padded: &Array2<f64>, filters: &[ConvFilter]) -> (Vec<f64>, Vec<Vec<usize>>) {
    let mut pooled = Vec::new();
    let mut argmax = Vec::with_capacity(filters.len());
    for f in filters {
        let out = windows_view(padded, f.window).dot(&f.weight.t()) + &f.bias;
        let mut best_t = vec![0usize; out.ncols()];
        for c in 0..out.ncols() {
            let col = out.column(c);
            let mut best = col[0];
            for (t, &v) in col.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    best_t[c] = t;
                }
            }
            pooled.push(best);
        }
        argmax.push(best_t);
    }
    (pooled, argmax)
}

/// Multi-window convolution with max-over-time pooling. Inputs shorter than
/// the widest window are zero-padded at the end.
pub fn encoder_pool(rep: &EncoderRep, filters: &[ConvFilter]) -> Result<Vec<f64>> {
    let d = rep.ncols();
    let max_w = filters.iter().map(|f| f.window).max().unwrap_or(1);
    for f in filters {
        if f.weight.ncols() != f.window * d {
            return Err(Error::DimensionMismatch {
                record: format!("conv window {}", f.window),
                expected: f.weight.ncols() / f.window.max(1),
                found: d,
            });
        }
    }
    if rep.nrows() == 0 {
        return Err(Error::EmptyMatrix);
    }
    Ok(conv_pool(&padded(rep, max_w), filters).0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fusion network on a batch of input rows; returns the sigmoid outputs.
pub(crate) fn fusion_batch(z: &Array2<f64>, layers: &[Dense]) -> Array1<f64> {
    let mut act = z.to_owned();
    let last = layers.len() - 1;
    for (l, layer) in layers.iter().enumerate() {
        act = act.dot(&layer.weight.t()) + &layer.bias;
        if l < last {
            act.mapv_inplace(|v| v.max(0.0));
        }
    }
    act.column(0).mapv(sigmoid)
}

/// Fusion network on a single `[pooled, df, corpus]` input.
pub fn fusion_forward(pooled: &[f64], df: &[f64], corpus: &[f64], layers: &[Dense]) -> Result<f64> {
    let first = layers
        .first()
        .ok_or(Error::InvalidConfig("fusion network has no layers".into()))?;
    let width = pooled.len() + df.len() + corpus.len();
    if df.len() != N_DF || corpus.len() != N_CORPUS || first.weight.ncols() != width {
        return Err(Error::DimensionMismatch {
            record: "fusion input".into(),
            expected: first.weight.ncols(),
            found: width,
        });
    }
    let z = Array2::from_shape_vec((1, width), [pooled, df, corpus].concat()).expect("width checked");
    Ok(fusion_batch(&z, layers)[0])
}

impl PredictorModel {
    /// Randomly initialized, untrained model.
    pub fn init(cfg: NetConfig) -> Result<Self> {
        cfg.check()?;
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
        let weights = NetWeights::init(&cfg, &mut rng);
        Ok(Self {
            config: cfg,
            weights,
            df_norm: DfNormalization::default(),
        })
    }

    fn check_rep(&self, rep: &EncoderRep) -> Result<()> {
        if rep.ncols() != self.config.encoder_dim {
            return Err(Error::DimensionMismatch {
                record: "encoder representation".into(),
                expected: self.config.encoder_dim,
                found: rep.ncols(),
            });
        }
        if rep.nrows() == 0 {
            return Err(Error::EmptyMatrix);
        }
        Ok(())
    }

    fn input_row(&self, pooled: &[f64], df: &[f64; N_DF], corpus: &[f64; N_CORPUS], mask: &[f64], out: &mut [f64]) {
        let p = pooled.len();
        out[..p].copy_from_slice(pooled);
        out[p..p + N_DF].copy_from_slice(df);
        out[p + N_DF..].copy_from_slice(corpus);
        for (v, m) in out.iter_mut().zip(mask) {
            *v *= m;
        }
    }

    /// Predicted sentence-level chrF for one sentence and one sample.
    pub fn predict_instance(&self, rep: &EncoderRep, df: &InstanceFeatures, corpus: &CorpusFeatures) -> Result<f64> {
        self.check_rep(rep)?;
        let pooled = self
            .config
            .pool(&padded(rep, self.config.max_window()), &self.weights.conv);
        let mut row = vec![0.0; self.config.fusion_input_dim()];
        self.input_row(
            &pooled,
            &self.df_norm.apply(df),
            &corpus.to_array(),
            &self.config.input_mask(),
            &mut row,
        );
        let z = Array2::from_shape_vec((1, row.len()), row).expect("row width");
        Ok(fusion_batch(&z, &self.weights.fusion)[0])
    }

    /// Mean prediction over `sentences` for each entry of `corpus_by_size`.
    pub fn predict_curve_with(
        &self,
        sentences: &[&SentenceRecord],
        corpus_by_size: &BTreeMap<AnchorSize, CorpusFeatures>,
    ) -> Result<LearningCurve> {
        if sentences.is_empty() {
            return Err(Error::EmptyList);
        }
        let width = self.config.fusion_input_dim();
        let mask = self.config.input_mask();
        let mut pooled = Vec::with_capacity(sentences.len());
        let mut dfs = Vec::with_capacity(sentences.len());
        for s in sentences {
            self.check_rep(&s.encoder_rep)?;
            pooled.push(
                self.config
                    .pool(&padded(&s.encoder_rep, self.config.max_window()), &self.weights.conv),
            );
            dfs.push(self.df_norm.apply(&InstanceFeatures::from_record(s)?));
        }
        let mut curve = LearningCurve::default();
        for (&size, cf) in corpus_by_size {
            let corpus = cf.to_array();
            let mut z = Array2::zeros((sentences.len(), width));
            for (i, mut row) in z.rows_mut().into_iter().enumerate() {
                self.input_row(&pooled[i], &dfs[i], &corpus, &mask, row.as_slice_mut().expect("row"));
            }
            let preds = fusion_batch(&z, &self.weights.fusion);
            curve.0.insert(size, preds.sum() / preds.len() as f64);
        }
        Ok(curve)
    }
}

/// Predicted learning curve of `sentences` at `sizes`, with corpus
/// features taken from the domain's source samples (or extrapolated past
/// the largest sample when `extrapolate` is set).
pub fn predict_curve(
    model: &PredictorModel,
    sentences: &[&SentenceRecord],
    samples: &BTreeMap<AnchorSize, SampleStats>,
    sizes: &[AnchorSize],
    extrapolate: bool,
) -> Result<LearningCurve> {
    let mut corpus = BTreeMap::new();
    for &n in sizes {
        corpus.insert(n, features::resolve_corpus_features(samples, n, extrapolate)?);
    }
    model.predict_curve_with(sentences, &corpus)
}
