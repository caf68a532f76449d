//! Weighted polynomial relation between two features.
//!
//! For weighted source `x̂ = w⊙x` and target `ŷ = w⊙y`, the normal equations
//! of the degree-k polynomial fit of `ŷ` on `x̂` are `M F = v` with
//! `M_ab = Σ x̂^(a+b)` and `v_a = Σ x̂^a ŷ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::reciprocal_condition;
use crate::{Error, Result};

/// Systems whose reciprocal condition number falls below this are solved
/// through the ridge-regularized normal form instead of directly.
pub const CONDITION_FLOOR: f64 = 1e-13;
pub const RIDGE_SCALE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyRelation {
    /// Taylor coefficients, constant term first.
    pub coeffs: Vec<f64>,
    pub source: usize,
    pub target: usize,
    pub degree: usize,
}

impl PolyRelation {
    /// Squared norm of the non-constant coefficients.
    pub fn tail_norm_sq(&self) -> f64 {
        self.coeffs[1..].iter().map(|c| c * c).sum()
    }
}

/// Power sums `Σ x̂^s` for `s = 0..=2k` and `Σ x̂^a ŷ` for `a = 0..=k`.
pub(crate) fn power_sums(xh: &[f64], yh: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut s = vec![0.0; 2 * k + 1];
    let mut t = vec![0.0; k + 1];
    for (&x, &y) in xh.iter().zip(yh) {
        let mut pw = 1.0;
        for m in 0..=2 * k {
            s[m] += pw;
            if m <= k {
                t[m] += pw * y;
            }
            pw *= x;
        }
    }
    (s, t)
}

pub(crate) fn hankel(s: &[f64], k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k + 1, k + 1, |a, b| s[a + b])
}

pub fn weighted_moment_system(
    source: &[f64],
    target: &[f64],
    w: &[f64],
    k: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if source.len() != target.len() || source.len() != w.len() {
        return Err(Error::DimensionMismatch(format!(
            "source {}, target {}, weights {}",
            source.len(),
            target.len(),
            w.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("degree must be at least 1".into()));
    }
    let xh: Vec<f64> = source.iter().zip(w).map(|(x, w)| w * x).collect();
    let yh: Vec<f64> = target.iter().zip(w).map(|(y, w)| w * y).collect();
    let (s, t) = power_sums(&xh, &yh, k);
    Ok((hankel(&s, k), DVector::from_vec(t)))
}

/// A solved system together with what the adjoint pass needs.
pub(crate) struct Solved {
    pub coeffs: DVector<f64>,
    ridge: Option<RidgeForm>,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

struct RidgeForm {
    residual: DVector<f64>,
}

impl Solved {
    /// For a loss gradient `g = dL/dF`, returns `(α, β)` with
    /// `dL = Σ α_a dv_a + Σ β_ab dM_ab`.
    pub fn adjoint(&self, m: &DMatrix<f64>, g: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let lam = self.factor.solve(g);
        match &self.ridge {
            None => {
                let beta = -&lam * self.coeffs.transpose();
                (lam, beta)
            }
            Some(r) => {
                let ml = m * &lam;
                let beta = &r.residual * lam.transpose() - &ml * self.coeffs.transpose();
                (ml, beta)
            }
        }
    }
}

pub(crate) fn solve_system(m: &DMatrix<f64>, v: &DVector<f64>) -> Result<Solved> {
    let finite = m.iter().chain(v.iter()).all(|x| x.is_finite());
    if !finite {
        return Err(Error::SingularSystem("moment system has non-finite entries".into()));
    }
    if reciprocal_condition(m) > CONDITION_FLOOR {
        if let Some(factor) = m.clone().cholesky() {
            let coeffs = factor.solve(v);
            if coeffs.iter().all(|c| c.is_finite()) {
                return Ok(Solved { coeffs, ridge: None, factor });
            }
        }
    }
    let k1 = m.nrows();
    let mtm = m.transpose() * m;
    let delta = RIDGE_SCALE * mtm.trace() / k1 as f64;
    let a = &mtm + DMatrix::identity(k1, k1) * delta;
    let factor = a
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("moment system singular after ridge floor".into()))?;
    let coeffs = factor.solve(&(m.transpose() * v));
    if coeffs.iter().any(|c| !c.is_finite()) {
        return Err(Error::SingularSystem("non-finite relation coefficients".into()));
    }
    let residual = v - m * &coeffs;
    Ok(Solved { coeffs, ridge: Some(RidgeForm { residual }), factor })
}

/// Coefficients of the polynomial relation `target ≈ F(source)`. Well
/// conditioned systems are solved directly; otherwise the ridge-floored
/// normal form `(MᵀM + δI) F = Mᵀv` is used.
pub fn solve_relation(
    m: &DMatrix<f64>,
    v: &DVector<f64>,
    source: usize,
    target: usize,
    k: usize,
) -> Result<PolyRelation> {
    if m.nrows() != k + 1 || m.ncols() != k + 1 || v.len() != k + 1 {
        return Err(Error::DimensionMismatch(format!("degree {k} needs a {0}x{0} system", k + 1)));
    }
    let solved = solve_system(m, v)?;
    Ok(PolyRelation { coeffs: solved.coeffs.iter().copied().collect(), source, target, degree: k })
}
