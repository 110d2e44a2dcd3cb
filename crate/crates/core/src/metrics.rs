//! Sentence-level chrF and the error metrics used to score predictors.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChrfConfig {
    pub max_char_order: usize,
    pub beta: f64,
    pub strip_whitespace: bool,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        Self {
            max_char_order: 6,
            beta: 2.0,
            strip_whitespace: true,
        }
    }
}

fn char_ngrams(chars: &[char], order: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    if chars.len() >= order {
        for gram in chars.windows(order) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Character n-gram F-score of `hypothesis` against `reference`, in `[0, 1]`.
///
/// Precision and recall are averaged over the orders `1..=max_char_order`
/// for which the reference has at least one n-gram, then combined as F-beta.
/// An order the hypothesis is too short for contributes zero precision.
pub fn chrf(hypothesis: &str, reference: &str, cfg: &ChrfConfig) -> Result<f64> {
    if cfg.max_char_order == 0 || !(cfg.beta > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "chrF needs max_char_order >= 1 and beta > 0, got {} / {}",
            cfg.max_char_order, cfg.beta
        )));
    }
    let prep = |s: &str| -> Vec<char> {
        if cfg.strip_whitespace {
            s.chars().filter(|c| !c.is_whitespace()).collect()
        } else {
            s.chars().collect()
        }
    };
    let hyp = prep(hypothesis);
    let refr = prep(reference);
    if refr.is_empty() {
        return Err(Error::EmptyReference);
    }

    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut orders = 0usize;
    for order in 1..=cfg.max_char_order {
        if refr.len() < order {
            break;
        }
        let ref_counts = char_ngrams(&refr, order);
        let hyp_counts = char_ngrams(&hyp, order);
        let matched: usize = hyp_counts
            .iter()
            .map(|(gram, &n)| n.min(ref_counts.get(gram).copied().unwrap_or(0)))
            .sum();
        let ref_total = refr.len() + 1 - order;
        let hyp_total = (hyp.len() + 1).saturating_sub(order);
        if hyp_total > 0 {
            precision_sum += matched as f64 / hyp_total as f64;
        }
        recall_sum += matched as f64 / ref_total as f64;
        orders += 1;
    }

    let p = precision_sum / orders as f64;
    let r = recall_sum / orders as f64;
    if p == 0.0 && r == 0.0 {
        return Ok(0.0);
    }
    let b2 = cfg.beta * cfg.beta;
    Ok((1.0 + b2) * p * r / (b2 * p + r))
}

pub fn mean_chrf(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn check_pair(pred: &[f64], gold: &[f64]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(())
}

pub fn rmse(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_pair(pred, gold)?;
    let sq: f64 = pred.iter().zip(gold).map(|(p, g)| (p - g).powi(2)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], gold: &[f64]) -> Result<f64> {
    check_pair(pred, gold)?;
    let abs: f64 = pred.iter().zip(gold).map(|(p, g)| (p - g).abs()).sum();
    Ok(abs / pred.len() as f64)
}
