//! The exp3 learning-curve baseline `y = c - exp(-a * x + b)`.
//!
//! The abscissa is `x = ln(1 + n)` for anchor size `n`: raw sizes up to 1e5
//! make `exp(-a * n)` underflow for any useful `a`, and the log keeps all
//! three parameters of order one.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{AnchorSize, LearningCurve};
use crate::error::{Error, Result};

pub const C_BOUNDS: (f64, f64) = (0.0, 1.5);
const MAX_ITERS: usize = 200;
const GRAD_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exp3Params {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorObservation {
    pub size: AnchorSize,
    pub score: f64,
}

impl AnchorObservation {
    pub fn new(size: AnchorSize, score: f64) -> Self {
        Self { size, score }
    }
}

#[inline]
pub fn log_size(size: AnchorSize) -> f64 {
    (size as f64).ln_1p()
}

fn eval_at(p: &Exp3Params, x: f64) -> f64 {
    p.c - (-p.a * x + p.b).exp()
}

pub fn exp3_eval(p: &Exp3Params, size: AnchorSize) -> f64 {
    eval_at(p, log_size(size))
}

/// Curve at `sizes`, clamped to `[0, 1]`.
pub fn exp3_curve(p: &Exp3Params, sizes: &[AnchorSize]) -> Result<LearningCurve> {
    if sizes.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(sizes.iter().map(|&n| (n, exp3_eval(p, n).clamp(0.0, 1.0))).collect())
}

/// Sum of squared residuals of `p` on `obs`.
pub fn exp3_sse(p: &Exp3Params, obs: &[AnchorObservation]) -> f64 {
    obs.iter().map(|o| (o.score - exp3_eval(p, o.size)).powi(2)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: Exp3Params,
    pub sse: f64,
    /// Index of the multi-start initialization that produced `params`.
    pub best_start: usize,
    /// Residual of every initialization before optimization.
    pub start_sse: Vec<f64>,
}

/// Multi-start initial guesses: a geometric grid over `a`, a linear grid
/// over `b`, and three asymptote candidates for `c`.
pub fn initial_guesses(obs: &[AnchorObservation]) -> Vec<Exp3Params> {
    let max_y = obs.iter().map(|o| o.score).fold(f64::NEG_INFINITY, f64::max);
    let clamp_c = |c: f64| c.clamp(C_BOUNDS.0, C_BOUNDS.1);
    let cs = [clamp_c(max_y), clamp_c(max_y + 0.1), 1.0];
    let mut out = Vec::with_capacity(210);
    for i in 0..10 {
        let a = 0.05 * 40f64.powf(i as f64 / 9.0);
        for j in 0..7 {
            let b = -2.0 + 5.0 * j as f64 / 6.0;
            for &c in &cs {
                out.push(Exp3Params { a, b, c });
            }
        }
    }
    out
}

pub fn exp3_fit(obs: &[AnchorObservation]) -> Result<Exp3Params> {
    Ok(exp3_fit_report(obs)?.params)
}

/// Least-squares fit with Levenberg-Marquardt from every initial guess;
/// the lowest residual wins, ties going to the earliest start.
pub fn exp3_fit_report(obs: &[AnchorObservation]) -> Result<FitReport> {
    if obs.len() < 3 {
        return Err(Error::TooFewObservations(obs.len()));
    }
    let distinct: BTreeSet<_> = obs.iter().map(|o| o.size).collect();
    if distinct.len() < 3 {
        return Err(Error::DegenerateSizes(distinct.len()));
    }
    let xs: Vec<f64> = obs.iter().map(|o| log_size(o.size)).collect();
    let ys: Vec<f64> = obs.iter().map(|o| o.score).collect();

    let starts = initial_guesses(obs);
    let start_sse: Vec<f64> = starts.iter().map(|p| exp3_sse(p, obs)).collect();
    let mut best: Option<(Exp3Params, f64, usize)> = None;
    for (k, start) in starts.iter().enumerate() {
        let (p, sse) = levenberg_marquardt(*start, &xs, &ys);
        if best.as_ref().is_none_or(|&(_, s, _)| sse < s) {
            best = Some((p, sse, k));
        }
    }
    let (params, sse, best_start) = best.expect("grid is non-empty");
    Ok(FitReport {
        params,
        sse,
        best_start,
        start_sse,
    })
}

fn sse_at(p: &Exp3Params, xs: &[f64], ys: &[f64]) -> f64 {
    let s: f64 = xs.iter().zip(ys).map(|(&x, &y)| (y - eval_at(p, x)).powi(2)).sum();
    if s.is_finite() {
        s
    } else {
        f64::INFINITY
    }
}

fn levenberg_marquardt(mut p: Exp3Params, xs: &[f64], ys: &[f64]) -> (Exp3Params, f64) {
    let mut sse = sse_at(&p, xs, ys);
    if !sse.is_finite() {
        return (p, sse);
    }
    let mut damping = 1e-3;
    for _ in 0..MAX_ITERS {
        // normal equations J^T J and J^T r, r = y - f
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for (&x, &y) in xs.iter().zip(ys) {
            let e = (-p.a * x + p.b).exp();
            let j = [x * e, -e, 1.0];
            let r = y - (p.c - e);
            for u in 0..3 {
                jtr[u] += j[u] * r;
                for v in 0..3 {
                    jtj[u][v] += j[u] * j[v];
                }
            }
        }
        if jtr.iter().map(|g| g * g).sum::<f64>().sqrt() < GRAD_TOL {
            break;
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut lhs = jtj;
            for (u, row) in lhs.iter_mut().enumerate() {
                row[u] += damping * jtj[u][u].max(1e-12);
            }
            let Some(step) = solve3(lhs, jtr) else {
                damping *= 10.0;
                continue;
            };
            let cand = Exp3Params {
                a: p.a + step[0],
                b: p.b + step[1],
                c: (p.c + step[2]).clamp(C_BOUNDS.0, C_BOUNDS.1),
            };
            let cand_sse = sse_at(&cand, xs, ys);
            if cand_sse < sse {
                p = cand;
                sse = cand_sse;
                damping = (damping / 3.0).max(1e-15);
                improved = true;
                break;
            }
            damping *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (p, sse)
}

/// Gaussian elimination with partial pivoting on a 3x3 system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
