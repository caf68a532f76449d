//! Nonlinear decorrelation penalty and its exact gradient.
//!
//! Weights enter through their mean-one rescaling `ω = n W / ΣW`, so the
//! penalty only depends on the relative weights.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::relation::{hankel, power_sums, solve_system};
use crate::{Error, Result};

/// What each weighted source feature is regressed onto.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationTarget {
    /// Every other feature, over all ordered pairs.
    #[default]
    Partner,
    /// The outcome vector, once per feature.
    Outcome(Vec<f64>),
}

fn mean_one(w: &[f64]) -> Result<(Vec<f64>, f64)> {
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) || w.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidConfig("weights must be non-negative with a positive finite sum".into()));
    }
    let n = w.len() as f64;
    Ok((w.iter().map(|v| v * n / total).collect(), total))
}

fn check(x: &DMatrix<f64>, w: &[f64], k: usize, target: &RelationTarget) -> Result<()> {
    if x.nrows() != w.len() {
        return Err(Error::DimensionMismatch(format!("{} rows but {} weights", x.nrows(), w.len())));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("degree must be at least 1".into()));
    }
    match target {
        RelationTarget::Partner if x.ncols() < 2 => Err(Error::InvalidConfig("need at least two features".into())),
        RelationTarget::Outcome(y) if y.len() != x.nrows() => {
            Err(Error::DimensionMismatch(format!("{} rows but outcome of length {}", x.nrows(), y.len())))
        }
        _ => Ok(()),
    }
}

/// Penalty contribution of one source/target pair and, optionally, its
/// gradient with respect to the mean-one weights.
fn pair_term(
    xs: &[f64],
    ys: &[f64],
    omega: &[f64],
    k: usize,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let xh: Vec<f64> = xs.iter().zip(omega).map(|(x, w)| x * w).collect();
    let yh: Vec<f64> = ys.iter().zip(omega).map(|(y, w)| y * w).collect();
    let (s, t) = power_sums(&xh, &yh, k);
    let m = hankel(&s, k);
    let v = DVector::from_vec(t);
    let solved = solve_system(&m, &v)?;
    let f = &solved.coeffs;
    let value: f64 = f.iter().skip(1).map(|c| c * c).sum();
    if !with_grad {
        return Ok((value, None));
    }

    let mut g = DVector::zeros(k + 1);
    for a in 1..=k {
        g[a] = 2.0 * f[a];
    }
    let (alpha, beta) = solved.adjoint(&m, &g);
    // Collapse β over anti-diagonals: M_ab depends on the power sum of order a+b.
    let mut c = vec![0.0; 2 * k + 1];
    for a in 0..=k {
        for b in 0..=k {
            c[a + b] += beta[(a, b)];
        }
    }
    // d/dω_i of Σ x̂^a ŷ is (a+1) x̂^a y, of Σ x̂^s it is s x̂^(s-1) x.
    let grad = (0..xs.len())
        .map(|i| {
            let (x, y, xhat) = (xs[i], ys[i], xh[i]);
            let mut acc = 0.0;
            let mut pw = 1.0;
            for sdeg in 0..=2 * k {
                if sdeg <= k {
                    acc += alpha[sdeg] * (sdeg as f64 + 1.0) * pw * y;
                }
                if sdeg < 2 * k {
                    acc += c[sdeg + 1] * (sdeg as f64 + 1.0) * pw * x;
                }
                pw *= xhat;
            }
            acc
        })
        .collect();
    Ok((value, Some(grad)))
}

pub(crate) fn column(x: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = x.nrows();
    &x.as_slice()[j * n..(j + 1) * n]
}

fn pairs(p: usize, target: &RelationTarget) -> Vec<(usize, Option<usize>)> {
    match target {
        RelationTarget::Partner => (0..p)
            .flat_map(|src| (0..p).filter(move |&tgt| tgt != src).map(move |tgt| (src, Some(tgt))))
            .collect(),
        RelationTarget::Outcome(_) => (0..p).map(|src| (src, None)).collect(),
    }
}

/// Penalty value and, when requested, its gradient with respect to the raw weights.
pub fn penalty_eval(
    x: &DMatrix<f64>,
    w: &[f64],
    k: usize,
    target: &RelationTarget,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    check(x, w, k, target)?;
    let (omega, total) = mean_one(w)?;
    let n = w.len();
    let terms: Vec<(f64, Option<Vec<f64>>)> = pairs(x.ncols(), target)
        .into_par_iter()
        .map(|(src, tgt)| {
            let ys = match (tgt, target) {
                (Some(t), _) => column(x, t),
                (None, RelationTarget::Outcome(y)) => y.as_slice(),
                (None, RelationTarget::Partner) => unreachable!(),
            };
            pair_term(column(x, src), ys, &omega, k, with_grad)
        })
        .collect::<Result<_>>()?;

    let value = terms.iter().map(|t| t.0).sum();
    if !with_grad {
        return Ok((value, None));
    }
    let mut g_omega = vec![0.0; n];
    for (_, g) in &terms {
        for (acc, gi) in g_omega.iter_mut().zip(g.as_ref().unwrap()) {
            *acc += gi;
        }
    }
    // Chain through ω = n W / ΣW.
    let mean_term: f64 = g_omega.iter().zip(&omega).map(|(g, o)| g * o).sum::<f64>() / n as f64;
    let scale = n as f64 / total;
    Ok((value, Some(g_omega.iter().map(|g| scale * (g - mean_term)).collect())))
}

/// Sum over ordered feature pairs of the squared non-constant coefficients
/// of the weighted polynomial relation.
pub fn decorrelation_penalty(x: &DMatrix<f64>, w: &[f64], k: usize) -> Result<f64> {
    Ok(penalty_eval(x, w, k, &RelationTarget::Partner, false)?.0)
}

pub fn penalty_gradient(x: &DMatrix<f64>, w: &[f64], k: usize) -> Result<Vec<f64>> {
    Ok(penalty_eval(x, w, k, &RelationTarget::Partner, true)?.1.unwrap())
}
