//! Gradient-boosted regression trees with squared loss, exact greedy
//! splits and L2-regularized Newton leaf weights.
//!
//! Gradient and hessian of `½(pred - y)²` are `pred - y` and `1`. A leaf's
//! weight is `-G / (H + λ)` and a split's gain is
//! `½ [G_L²/(H_L+λ) + G_R²/(H_R+λ) - G²/(H+λ)]`; a split is taken only when
//! its gain is strictly positive. Equal gains resolve to the lowest feature
//! index, then the lowest threshold.

use serde::{Deserialize, Serialize};

use crate::dataset::SentenceRecord;
use crate::error::{Error, Result};
use crate::features::{minmax_pool, CorpusFeatures, InstanceFeatures};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_trees: usize,
    /// Maximum number of split levels; 0 makes every tree a single leaf.
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda_l2: f64,
    pub min_samples_leaf: usize,
    pub base_score: f64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 10,
            learning_rate: 0.1,
            lambda_l2: 1.0,
            min_samples_leaf: 1,
            base_score: 0.5,
        }
    }
}

impl GbtConfig {
    fn check(&self) -> Result<()> {
        let ok = self.n_trees >= 1
            && self.learning_rate > 0.0
            && self.learning_rate <= 1.0
            && self.lambda_l2 >= 0.0
            && self.min_samples_leaf >= 1
            && self.base_score.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad boosting config {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_weight(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { weight } => return weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            go(&self.nodes, 0)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub n_features: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Training MSE before the first tree and after each one.
    #[serde(default)]
    pub training_mse: Vec<f64>,
    pub seed: u64,
}

impl GbtModel {
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        gbt_predict(self, row)
    }
}

pub fn gbt_predict(m: &GbtModel, row: &[f64]) -> Result<f64> {
    if row.len() != m.n_features {
        return Err(Error::DimensionMismatch {
            record: "gbt row".into(),
            expected: m.n_features,
            found: row.len(),
        });
    }
    Ok(m.base_score + m.learning_rate * m.trees.iter().map(|t| t.leaf_weight(row)).sum::<f64>())
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    grad: Vec<f64>,
    cfg: &'a GbtConfig,
    max_depth: usize,
    nodes: Vec<Node>,
    /// Leaf weight assigned to each row by the tree under construction.
    row_weight: Vec<f64>,
    side: Vec<bool>,
}

impl Builder<'_> {
    /// `sorted[f]` lists the node's rows ordered by feature `f` (ties by row).
    fn build(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let members = &sorted[0];
        let n = members.len() as f64;
        let g_sum: f64 = members.iter().map(|&i| self.grad[i as usize]).sum();
        let lambda = self.cfg.lambda_l2;
        let idx = self.nodes.len();

        let best = if depth < self.max_depth {
            self.best_split(&sorted, g_sum)
        } else {
            None
        };
        let Some((feature, threshold)) = best else {
            let weight = -g_sum / (n + lambda);
            for &i in members {
                self.row_weight[i as usize] = weight;
            }
            self.nodes.push(Node::Leaf { weight });
            return idx;
        };

        for &i in members {
            self.side[i as usize] = self.rows[i as usize][feature] < threshold;
        }
        let (mut left, mut right) = (Vec::with_capacity(sorted.len()), Vec::with_capacity(sorted.len()));
        for list in sorted {
            let (l, r): (Vec<u32>, Vec<u32>) = list.into_iter().partition(|&i| self.side[i as usize]);
            left.push(l);
            right.push(r);
        }
        self.nodes.push(Node::Leaf { weight: 0.0 });
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.nodes[idx] = Node::Split {
            feature,
            threshold,
            left: l,
            right: r,
        };
        idx
    }

    fn best_split(&self, sorted: &[Vec<u32>], g_sum: f64) -> Option<(usize, f64)> {
        let lambda = self.cfg.lambda_l2;
        let min_leaf = self.cfg.min_samples_leaf;
        let n_total = sorted[0].len();
        if n_total < 2 * min_leaf {
            return None;
        }
        let score = |g: f64, h: f64| g * g / (h + lambda);
        let parent = score(g_sum, n_total as f64);
        let mut best: Option<(f64, usize, f64)> = None;
        for (f, list) in sorted.iter().enumerate() {
            let mut g_left = 0.0;
            for (k, pair) in list.windows(2).enumerate() {
                let (i, j) = (pair[0] as usize, pair[1] as usize);
                g_left += self.grad[i];
                let n_left = k + 1;
                let (vi, vj) = (self.rows[i][f], self.rows[j][f]);
                if vi >= vj || n_left < min_leaf || n_total - n_left < min_leaf {
                    continue;
                }
                let h_left = n_left as f64;
                let h_right = (n_total - n_left) as f64;
                let gain = 0.5 * (score(g_left, h_left) + score(g_sum - g_left, h_right) - parent);
                if gain > 0.0 && best.is_none_or(|(bg, _, _)| gain > bg) {
                    let mut thr = vi + (vj - vi) / 2.0;
                    if !(thr > vi && thr <= vj) {
                        thr = vj;
                    }
                    best = Some((gain, f, thr));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn mse(pred: &[f64], targets: &[f64]) -> f64 {
    pred.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / pred.len() as f64
}

pub fn gbt_fit(rows: &[Vec<f64>], targets: &[f64], cfg: &GbtConfig, seed: u64) -> Result<GbtModel> {
    cfg.check()?;
    if rows.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if rows.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: targets.len(),
        });
    }
    let n_features = rows[0].len();
    for (r, row) in rows.iter().enumerate() {
        if row.len() != n_features {
            return Err(Error::DimensionMismatch {
                record: format!("gbt row {r}"),
                expected: n_features,
                found: row.len(),
            });
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { row: r, col: c });
        }
    }
    if let Some(r) = targets.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteFeature {
            row: r,
            col: n_features,
        });
    }

    let n = rows.len();
    let presorted: Vec<Vec<u32>> = (0..n_features.max(1))
        .map(|f| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            if f < n_features {
                idx.sort_by(|&a, &b| rows[a as usize][f].total_cmp(&rows[b as usize][f]).then(a.cmp(&b)));
            }
            idx
        })
        .collect();

    let mut pred = vec![cfg.base_score; n];
    let mut history = vec![mse(&pred, targets)];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut builder = Builder {
        rows,
        grad: vec![0.0; n],
        cfg,
        max_depth: if n_features == 0 { 0 } else { cfg.max_depth },
        nodes: Vec::new(),
        row_weight: vec![0.0; n],
        side: vec![false; n],
    };
    for _ in 0..cfg.n_trees {
        for i in 0..n {
            builder.grad[i] = pred[i] - targets[i];
        }
        builder.nodes.clear();
        builder.build(presorted.clone(), 0);
        for i in 0..n {
            pred[i] += cfg.learning_rate * builder.row_weight[i];
        }
        history.push(mse(&pred, targets));
        trees.push(Tree {
            nodes: std::mem::take(&mut builder.nodes),
        });
    }
    Ok(GbtModel {
        n_features,
        base_score: cfg.base_score,
        learning_rate: cfg.learning_rate,
        trees,
        training_mse: history,
        seed,
    })
}

/// Feature row of the instance-level boosted baseline:
/// `[minmax_pool(encoder) (2d), difficulty features (4), corpus features (7)]`.
pub fn gbt_instance_rows(record: &SentenceRecord, cf: &CorpusFeatures) -> Result<Vec<f64>> {
    let mut row = minmax_pool(&record.encoder_rep)?;
    row.extend(InstanceFeatures::from_record(record)?.to_array());
    row.extend(cf.to_array());
    Ok(row)
}
