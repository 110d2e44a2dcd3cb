//! Mini-batch training of the predictor with Adam, exponential learning
//! rate decay and early stopping on a held-out validation split.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{conv_pool, padded, DfNormalization, NetConfig, NetWeights, PredictorModel, N_CORPUS, N_DF};
use crate::dataset::EncoderRep;
use crate::error::{Error, Result};
use crate::features::{CorpusFeatures, InstanceFeatures};

pub const MIN_INSTANCES: usize = 10;

/// One `(sentence, in-domain sample, gold chrF)` regression example.
///
/// Instances of the same sentence at different anchor sizes should share
/// one `encoder_rep` allocation; the trainer pools each sentence once per
/// step and keeps all of a sentence's instances on the same side of the
/// train/validation split.
#[derive(Clone, Debug)]
pub struct TrainingInstance {
    pub encoder_rep: Arc<EncoderRep>,
    pub df: InstanceFeatures,
    pub corpus: CorpusFeatures,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean mini-batch loss over the epoch.
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub n_train: usize,
    pub n_val: usize,
}

struct Item {
    input: [f64; N_DF + N_CORPUS],
    target: f64,
}

struct Group {
    padded: Array2<f64>,
    items: Vec<Item>,
}

fn group_instances(instances: &[TrainingInstance], norm: &DfNormalization, max_window: usize) -> Vec<Group> {
    let mut index: HashMap<*const EncoderRep, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for inst in instances {
        let key = Arc::as_ptr(&inst.encoder_rep);
        let g = *index.entry(key).or_insert_with(|| {
            groups.push(Group {
                padded: padded(&inst.encoder_rep, max_window),
                items: Vec::new(),
            });
            groups.len() - 1
        });
        let mut input = [0.0; N_DF + N_CORPUS];
        input[..N_DF].copy_from_slice(&norm.apply(&inst.df));
        input[N_DF..].copy_from_slice(&inst.corpus.to_array());
        groups[g].items.push(Item {
            input,
            target: inst.target,
        });
    }
    groups
}

struct Forward {
    /// Post-activation outputs of every fusion layer, input first.
    acts: Vec<Array2<f64>>,
    out: Array1<f64>,
    argmax: Vec<Vec<Vec<usize>>>,
    targets: Array1<f64>,
}

fn forward(w: &NetWeights, groups: &[&Group], mask: &[f64], cfg: &NetConfig) -> Forward {
    let pooled_dim = cfg.pooled_dim();
    let n: usize = groups.iter().map(|g| g.items.len()).sum();
    let width = mask.len();
    let mut z = Array2::zeros((n, width));
    let mut targets = Array1::zeros(n);
    let mut argmax = Vec::with_capacity(groups.len());
    let mut row = 0;
    for g in groups {
        let (pooled, am) = conv_pool(&g.padded, &w.conv);
        let pooled = cfg.pool_merge.apply(pooled, cfg.channels_per_window);
        argmax.push(am);
        for item in &g.items {
            let mut r = z.row_mut(row);
            let r = r.as_slice_mut().expect("row");
            r[..pooled_dim].copy_from_slice(&pooled);
            r[pooled_dim..].copy_from_slice(&item.input);
            for (v, m) in r.iter_mut().zip(mask) {
                *v *= m;
            }
            targets[row] = item.target;
            row += 1;
        }
    }
    let mut acts = vec![z];
    let last = w.fusion.len() - 1;
    for (l, layer) in w.fusion.iter().enumerate() {
        let mut a = acts[l].dot(&layer.weight.t()) + &layer.bias;
        if l < last {
            a.mapv_inplace(|v| v.max(0.0));
        }
        acts.push(a);
    }
    let out = acts[last + 1].column(0).mapv(|x| 1.0 / (1.0 + (-x).exp()));
    Forward {
        acts,
        out,
        argmax,
        targets,
    }
}

fn batch_mse(f: &Forward) -> f64 {
    let n = f.out.len() as f64;
    f.out.iter().zip(&f.targets).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / n
}

/// Gradient of the batch mean squared error, accumulated into `grad`.
fn backward(w: &NetWeights, groups: &[&Group], f: &Forward, mask: &[f64], cfg: &NetConfig, grad: &mut NetWeights) {
    let pooled_dim = cfg.pooled_dim();
    let n = f.out.len() as f64;
    let last = w.fusion.len() - 1;
    // d loss / d pre-sigmoid
    let mut delta: Array2<f64> = Array2::from_shape_fn((f.out.len(), 1), |(i, _)| {
        let o = f.out[i];
        2.0 * (o - f.targets[i]) / n * o * (1.0 - o)
    });
    let mut dz = None;
    for l in (0..=last).rev() {
        let g = &mut grad.fusion[l];
        g.weight += &delta.t().dot(&f.acts[l]);
        g.bias += &delta.sum_axis(Axis(0));
        let mut da = delta.dot(&w.fusion[l].weight);
        if l > 0 {
            ndarray::Zip::from(&mut da).and(&f.acts[l]).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = da;
        } else {
            dz = Some(da);
        }
    }
    let dz = dz.expect("at least one layer");

    let mut row = 0;
    for (gi, group) in groups.iter().enumerate() {
        let mut dpooled = vec![0.0; pooled_dim];
        for _ in &group.items {
            for (k, dp) in dpooled.iter_mut().enumerate() {
                *dp += dz[[row, k]] * mask[k];
            }
            row += 1;
        }
        let d = group.padded.ncols();
        let data = group.padded.as_slice().expect("standard layout");
        for (fi, filt) in w.conv.iter().enumerate() {
            let gf = &mut grad.conv[fi];
            let width = filt.window * d;
            for c in 0..filt.weight.nrows() {
                let dp = dpooled[cfg.pool_merge.slot(fi, c, cfg.channels_per_window)];
                if dp == 0.0 {
                    continue;
                }
                let t = f.argmax[gi][fi][c];
                let patch = &data[t * d..t * d + width];
                let mut wrow = gf.weight.row_mut(c);
                for (wv, &x) in wrow.iter_mut().zip(patch) {
                    *wv += dp * x;
                }
                gf.bias[c] += dp;
            }
        }
    }
}

fn check_instances(instances: &[TrainingInstance], cfg: &NetConfig) -> Result<()> {
    for inst in instances {
        if inst.encoder_rep.ncols() != cfg.encoder_dim {
            return Err(Error::DimensionMismatch {
                record: "training instance".into(),
                expected: cfg.encoder_dim,
                found: inst.encoder_rep.ncols(),
            });
        }
        if inst.encoder_rep.nrows() == 0 {
            return Err(Error::EmptyMatrix);
        }
        if !(0.0..=1.0).contains(&inst.target) {
            return Err(Error::InvalidConfig(format!(
                "training target {} outside [0, 1]",
                inst.target
            )));
        }
    }
    Ok(())
}

/// Mean squared error of `model` over `instances`.
pub fn mse_loss(model: &PredictorModel, instances: &[TrainingInstance]) -> Result<f64> {
    check_instances(instances, &model.config)?;
    let groups = group_instances(instances, &model.df_norm, model.config.max_window());
    let refs: Vec<&Group> = groups.iter().collect();
    let f = forward(&model.weights, &refs, &model.config.input_mask(), &model.config);
    Ok(batch_mse(&f))
}

/// Mean squared error of `model` over `instances` and its gradient with
/// respect to every weight tensor.
pub fn mse_loss_and_gradients(model: &PredictorModel, instances: &[TrainingInstance]) -> Result<(f64, NetWeights)> {
    check_instances(instances, &model.config)?;
    if instances.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let cfg = &model.config;
    let groups = group_instances(instances, &model.df_norm, cfg.max_window());
    let refs: Vec<&Group> = groups.iter().collect();
    let mask = cfg.input_mask();
    let f = forward(&model.weights, &refs, &mask, cfg);
    let mut grad = model.weights.zeros_like();
    backward(&model.weights, &refs, &f, &mask, cfg, &mut grad);
    Ok((batch_mse(&f), grad))
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(w: &NetWeights) -> Self {
        let shapes: Vec<usize> = w.tensors().iter().map(|t| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, w: &mut NetWeights, grad: &NetWeights, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for (k, (p, g)) in w.tensors_mut().into_iter().zip(grad.tensors()).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn reset(grad: &mut NetWeights) {
    for t in grad.tensors_mut() {
        t.fill(0.0);
    }
}

/// Trains a predictor on `instances`.
///
/// Sentences (not instances) are shuffled into a validation share of
/// `val_fraction`; the rest are visited in shuffled mini-batches of about
/// `batch_size` instances. Training stops after `patience` epochs without
/// a new best validation MSE, and the best epoch's weights are returned.
pub fn train(instances: &[TrainingInstance], cfg: &NetConfig) -> Result<(PredictorModel, TrainingLog)> {
    cfg.check()?;
    if instances.len() < MIN_INSTANCES {
        return Err(Error::TooFewInstances {
            needed: MIN_INSTANCES,
            got: instances.len(),
        });
    }
    check_instances(instances, cfg)?;

    let df_norm = DfNormalization::fit(instances.iter().map(|i| &i.df));
    let groups = group_instances(instances, &df_norm, cfg.max_window());
    if groups.len() < 2 {
        return Err(Error::TooFewInstances {
            needed: MIN_INSTANCES,
            got: groups.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights = NetWeights::init(cfg, &mut rng);

    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((groups.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, groups.len() - 1);
    let val: Vec<&Group> = order[..n_val].iter().map(|&g| &groups[g]).collect();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();

    let mask = cfg.input_mask();
    let mut adam = Adam::new(&weights);
    let mut grad = weights.zeros_like();
    let mut log = TrainingLog {
        n_train: train_idx.iter().map(|&g| groups[g].items.len()).sum(),
        n_val: val.iter().map(|g| g.items.len()).sum(),
        ..Default::default()
    };
    let mut best: Option<(f64, NetWeights)> = None;
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr * cfg.lr_decay_per_epoch.powi(epoch as i32);
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        let mut start = 0;
        while start < train_idx.len() {
            let mut end = start;
            let mut count = 0;
            while end < train_idx.len() && count < cfg.batch_size {
                count += groups[train_idx[end]].items.len();
                end += 1;
            }
            let batch: Vec<&Group> = train_idx[start..end].iter().map(|&g| &groups[g]).collect();
            let f = forward(&weights, &batch, &mask, cfg);
            loss_sum += batch_mse(&f) * count as f64;
            seen += count;
            reset(&mut grad);
            backward(&weights, &batch, &f, &mask, cfg, &mut grad);
            adam.update(&mut weights, &grad, lr);
            start = end;
        }
        let val_mse = batch_mse(&forward(&weights, &val, &mask, cfg));
        log.epochs.push(EpochLog {
            epoch,
            lr,
            train_mse: loss_sum / seen.max(1) as f64,
            val_mse,
        });
        if !weights.is_finite() {
            return Err(Error::InvalidConfig(format!("training diverged at epoch {epoch}")));
        }
        if best.as_ref().is_none_or(|(b, _)| val_mse < *b) {
            best = Some((val_mse, weights.clone()));
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                log.stopped_early = true;
                break;
            }
        }
    }

    let (_, weights) = best.expect("at least one epoch");
    Ok((
        PredictorModel {
            config: cfg.clone(),
            weights,
            df_norm,
        },
        log,
    ))
}
