//! Linear-kernel SMO solver for box-constrained SVM duals with one equality
//! constraint, plus the hinge and epsilon-insensitive front ends.
//!
//! Working-set selection uses second-order information (Fan, Chen and Lin,
//! 2005). With a linear kernel the primal vector `w` is maintained directly,
//! so each iteration costs O(n d) over the active set. Both front ends start
//! from a smoothed primal solution.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::model::{ModelKind, ModelParams};
use crate::{Error, Result};

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoSettings {
    /// Maximal KKT violation accepted at termination.
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for SmoSettings {
    fn default() -> Self {
        Self { tolerance: 1e-6, max_iters: 20_000_000 }
    }
}

/// `min ½ aᵀQa + pᵀa  s.t.  Σ y_s a_s = 0, 0 ≤ a_s ≤ upper_s`, where
/// `Q_st = y_s y_t <x_s, x_t>` and `x_s` is row `rows[s]` of the data.
struct Dual<'a> {
    data: &'a [f64],
    d: usize,
    rows: Vec<usize>,
    y: Vec<f64>,
    p: Vec<f64>,
    upper: Vec<f64>,
}

struct DualSolution {
    w: Vec<f64>,
    rho: f64,
}

impl Dual<'_> {
    fn x(&self, s: usize) -> &[f64] {
        let r = self.rows[s];
        &self.data[r * self.d..(r + 1) * self.d]
    }

    /// Clamps a starting point into the box and repairs `Σ y_s a_s = 0`.
    fn feasible(&self, mut alpha: Vec<f64>) -> Vec<f64> {
        for (a, &u) in alpha.iter_mut().zip(&self.upper) {
            *a = a.clamp(0.0, u);
        }
        let mut excess: f64 = alpha.iter().zip(&self.y).map(|(a, y)| a * y).sum();
        for s in 0..alpha.len() {
            if excess == 0.0 {
                break;
            }
            // Moving a_s by `step` changes the excess by y_s * step.
            let room = if (excess > 0.0) == (self.y[s] > 0.0) { -alpha[s] } else { self.upper[s] - alpha[s] };
            let step = if room < 0.0 { room.max(-excess.abs()) } else { room.min(excess.abs()) };
            alpha[s] += step;
            excess += self.y[s] * step;
        }
        alpha
    }

    /// Approximate multipliers from the primal of this dual,
    /// `½‖w‖² + Σ upper_s · max(0, -p_s - y_s (x_s·w + b))`, with each hinge
    /// smoothed quadratically over a band of width `delta` and solved by
    /// damped Newton steps while the band shrinks. The exact solver then only
    /// has to correct the few multipliers near a kink.
    fn smoothed_start(&self) -> Vec<f64> {
        let (m, d) = (self.rows.len(), self.d);
        let scale = (self.p.iter().map(|v| v.abs()).sum::<f64>() / m as f64).max(1e-12);
        let mut z = vec![0.0; d + 1];
        z[d] = -self.p.iter().zip(&self.y).map(|(p, y)| p * y).sum::<f64>() / m as f64;
        let slack = |z: &[f64], s: usize| {
            let f = z[d] + self.x(s).iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
            -self.p[s] - self.y[s] * f
        };
        let objective = |z: &[f64], delta: f64| {
            let mut f = 0.5 * z[..d].iter().map(|v| v * v).sum::<f64>();
            for s in 0..m {
                let t = slack(z, s);
                if t >= delta {
                    f += self.upper[s] * (t - 0.5 * delta);
                } else if t > 0.0 {
                    f += self.upper[s] * t * t / (2.0 * delta);
                }
            }
            f
        };
        let slope = |t: f64, delta: f64| if t >= delta { 1.0 } else { (t / delta).max(0.0) };

        let mut delta = scale;
        loop {
            for _ in 0..50 {
                let mut g = DVector::zeros(d + 1);
                for k in 0..d {
                    g[k] = z[k];
                }
                let mut band: Vec<f64> = Vec::new();
                for s in 0..m {
                    let t = slack(&z, s);
                    if t <= 0.0 {
                        continue;
                    }
                    let xs = self.x(s);
                    let gs = self.upper[s] * slope(t, delta) * self.y[s];
                    for k in 0..d {
                        g[k] -= gs * xs[k];
                    }
                    g[d] -= gs;
                    if t < delta {
                        let c = (self.upper[s] / delta).sqrt();
                        band.extend(xs.iter().map(|v| c * v));
                        band.push(c);
                    }
                }
                let rows = DMatrix::from_row_slice(band.len() / (d + 1), d + 1, &band);
                let mut h = rows.tr_mul(&rows);
                for k in 0..d {
                    h[(k, k)] += 1.0;
                }
                h[(d, d)] += 1e-9;
                if g.norm() < 1e-10 * scale {
                    break;
                }
                let Some(ch) = h.cholesky() else { break };
                let step = ch.solve(&g);
                let f0 = objective(&z, delta);
                let mut t = 1.0;
                let mut moved = false;
                for _ in 0..60 {
                    let trial: Vec<f64> = z.iter().zip(step.iter()).map(|(a, b)| a - t * b).collect();
                    if objective(&trial, delta) < f0 {
                        z = trial;
                        moved = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !moved {
                    break;
                }
            }
            if delta <= 1e-6 * scale {
                break;
            }
            delta *= 0.1;
        }
        (0..m).map(|s| self.upper[s] * slope(slack(&z, s), delta)).collect()
    }

    fn grad_at(&self, s: usize, w: &[f64]) -> f64 {
        self.p[s] + self.y[s] * self.x(s).iter().zip(w).map(|(u, v)| u * v).sum::<f64>()
    }

    /// Solves over a shrinking active set. Bound variables that cannot re-enter
    /// are dropped periodically; because the kernel is linear, their gradients
    /// are rebuilt from `w` in O(n d) before the final optimality check.
    fn solve(&self, start: Option<Vec<f64>>, settings: &SmoSettings) -> Result<DualSolution> {
        let m = self.rows.len();
        let d = self.d;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        let qd: Vec<f64> = (0..m).map(|s| dot(self.x(s), self.x(s))).collect();
        let mut alpha = match start {
            Some(a) => self.feasible(a),
            None => vec![0.0; m],
        };
        let mut w = vec![0.0; d];
        for s in 0..m {
            let a = self.y[s] * alpha[s];
            if a != 0.0 {
                for (wc, xc) in w.iter_mut().zip(self.x(s)) {
                    *wc += a * xc;
                }
            }
        }
        let mut grad: Vec<f64> = (0..m).map(|s| self.grad_at(s, &w)).collect();
        let mut xi = vec![0.0; d];
        let mut dw = vec![0.0; d];
        let at_upper = |a: &[f64], s: usize| a[s] >= self.upper[s];
        let at_lower = |a: &[f64], s: usize| a[s] <= 0.0;
        let up_movable = |a: &[f64], s: usize| if self.y[s] > 0.0 { !at_upper(a, s) } else { !at_lower(a, s) };
        let down_movable = |a: &[f64], s: usize| if self.y[s] > 0.0 { !at_lower(a, s) } else { !at_upper(a, s) };

        let mut active: Vec<usize> = (0..m).collect();
        let shrink_every = m.clamp(1, 1000);
        let mut countdown = shrink_every;
        let mut unshrunk_early = false;
        let mut iterations = 0;
        while iterations < settings.max_iters {
            countdown -= 1;
            if countdown == 0 {
                countdown = shrink_every;
                let (g1, g2) = active.iter().fold((f64::NEG_INFINITY, f64::NEG_INFINITY), |(g1, g2), &s| {
                    let v = self.y[s] * grad[s];
                    (
                        if up_movable(&alpha, s) { g1.max(-v) } else { g1 },
                        if down_movable(&alpha, s) { g2.max(v) } else { g2 },
                    )
                });
                if !unshrunk_early && g1 + g2 <= 10.0 * settings.tolerance {
                    unshrunk_early = true;
                    for s in 0..m {
                        grad[s] = self.grad_at(s, &w);
                    }
                    active = (0..m).collect();
                }
                active.retain(|&s| {
                    let v = self.y[s] * grad[s];
                    let stuck_low = !up_movable(&alpha, s) && -v > g2;
                    let stuck_high = !down_movable(&alpha, s) && v > g1;
                    !(stuck_low || stuck_high)
                });
            }

            // First index: maximal violation among variables allowed to move up.
            let (mut gmax, mut i) = (f64::NEG_INFINITY, usize::MAX);
            for &s in &active {
                let v = -self.y[s] * grad[s];
                if up_movable(&alpha, s) && v >= gmax {
                    gmax = v;
                    i = s;
                }
            }
            let mut j = usize::MAX;
            let mut gmax2 = f64::NEG_INFINITY;
            if i != usize::MAX {
                xi.copy_from_slice(self.x(i));
                let mut best = f64::INFINITY;
                for &s in &active {
                    if !down_movable(&alpha, s) {
                        continue;
                    }
                    let v = self.y[s] * grad[s];
                    gmax2 = gmax2.max(v);
                    let diff = gmax + v;
                    if diff > 0.0 {
                        let k = dot(&xi, self.x(s));
                        let quad = qd[i] + qd[s] - 2.0 * self.y[i] * self.y[s] * k;
                        let obj = -diff * diff / if quad > 0.0 { quad } else { TAU };
                        if obj <= best {
                            best = obj;
                            j = s;
                        }
                    }
                }
            }
            if i == usize::MAX || j == usize::MAX || gmax + gmax2 < settings.tolerance {
                if active.len() == m {
                    break;
                }
                for s in 0..m {
                    grad[s] = self.grad_at(s, &w);
                }
                active = (0..m).collect();
                countdown = 2;
                continue;
            }
            iterations += 1;

            let (ci, cj) = (self.upper[i], self.upper[j]);
            let (old_i, old_j) = (alpha[i], alpha[j]);
            let qij = self.y[i] * self.y[j] * dot(&xi, self.x(j));
            if self.y[i] != self.y[j] {
                let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > ci - cj {
                    if alpha[i] > ci {
                        alpha[i] = ci;
                        alpha[j] = ci - diff;
                    }
                } else if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = cj + diff;
                }
            } else {
                let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > ci {
                    if alpha[i] > ci {
                        alpha[i] = ci;
                        alpha[j] = sum - ci;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > cj {
                    if alpha[j] > cj {
                        alpha[j] = cj;
                        alpha[i] = sum - cj;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }

            let (di, dj) = ((alpha[i] - old_i) * self.y[i], (alpha[j] - old_j) * self.y[j]);
            let xj = self.x(j);
            for c in 0..d {
                dw[c] = di * xi[c] + dj * xj[c];
                w[c] += dw[c];
            }
            for &s in &active {
                grad[s] += self.y[s] * dot(self.x(s), &dw);
            }
        }
        if iterations >= settings.max_iters {
            return Err(Error::Divergence(format!("SMO did not converge in {} iterations", settings.max_iters)));
        }

        let (mut ub, mut lb, mut free, mut sum_free) = (f64::INFINITY, f64::NEG_INFINITY, 0usize, 0.0);
        for s in 0..m {
            let yg = self.y[s] * grad[s];
            if at_upper(&alpha, s) {
                if self.y[s] < 0.0 {
                    ub = ub.min(yg)
                } else {
                    lb = lb.max(yg)
                }
            } else if at_lower(&alpha, s) {
                if self.y[s] > 0.0 {
                    ub = ub.min(yg)
                } else {
                    lb = lb.max(yg)
                }
            } else {
                free += 1;
                sum_free += yg;
            }
        }
        let rho = if free > 0 {
            sum_free / free as f64
        } else if ub.is_finite() && lb.is_finite() {
            0.5 * (ub + lb)
        } else {
            0.0
        };
        Ok(DualSolution { w, rho })
    }
}

fn row_major(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = x.shape();
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            out.push(x[(i, j)]);
        }
    }
    out
}

fn check_costs(n: usize, costs: &[f64]) -> Result<()> {
    if costs.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} sample costs", costs.len())));
    }
    if costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
        return Err(Error::InvalidConfig("sample costs must be finite and non-negative".into()));
    }
    Ok(())
}

/// `min ½‖β‖² + Σ costs_i · max(0, |y_i − x_iβ − b| − ε)`.
pub fn fit_epsilon_svr(
    x: &DMatrix<f64>,
    y: &[f64],
    costs: &[f64],
    epsilon: f64,
    settings: &SmoSettings,
) -> Result<ModelParams> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} targets", y.len())));
    }
    check_costs(n, costs)?;
    let data = row_major(x);
    let active: Vec<usize> = (0..n).filter(|&i| costs[i] > 0.0).collect();
    if active.is_empty() {
        return Ok(ModelParams::zeros(d, ModelKind::Svr));
    }
    // Each sample contributes an upper (sign +1) and a lower (sign -1) multiplier.
    let mut dual = Dual { data: &data, d, rows: Vec::new(), y: Vec::new(), p: Vec::new(), upper: Vec::new() };
    for sign in [1.0, -1.0] {
        for &i in &active {
            dual.rows.push(i);
            dual.y.push(sign);
            dual.p.push(epsilon - sign * y[i]);
            dual.upper.push(costs[i]);
        }
    }
    let sol = dual.solve(Some(dual.smoothed_start()), settings)?;
    Ok(ModelParams { beta: sol.w, intercept: -sol.rho, kind: ModelKind::Svr })
}

/// `min ½‖β‖² + Σ costs_i · max(0, 1 − s_i (x_iβ + b))` with `s_i = ±1` from 0/1 labels.
pub fn fit_hinge(x: &DMatrix<f64>, labels: &[u8], costs: &[f64], settings: &SmoSettings) -> Result<ModelParams> {
    let (n, d) = x.shape();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} rows but {} labels", labels.len())));
    }
    check_costs(n, costs)?;
    let ones = labels.iter().filter(|&&l| l == 1).count();
    if ones == 0 || ones == n {
        return Err(Error::DegenerateLabels("hinge classifier needs both classes".into()));
    }
    let data = row_major(x);
    // Identical (row, label) pairs enter the primal as one term with the summed cost.
    let mut first: HashMap<(Vec<u64>, u8), usize> = HashMap::new();
    let (mut rows, mut upper) = (Vec::new(), Vec::new());
    for i in (0..n).filter(|&i| costs[i] > 0.0) {
        let key = (data[i * d..(i + 1) * d].iter().map(|v| v.to_bits()).collect(), labels[i]);
        match first.get(&key) {
            Some(&k) => upper[k] += costs[i],
            None => {
                first.insert(key, rows.len());
                rows.push(i);
                upper.push(costs[i]);
            }
        }
    }
    let dual = Dual {
        data: &data,
        d,
        y: rows.iter().map(|&i| if labels[i] == 1 { 1.0 } else { -1.0 }).collect(),
        p: vec![-1.0; rows.len()],
        upper,
        rows,
    };
    let sol = dual.solve(Some(dual.smoothed_start()), settings)?;
    Ok(ModelParams { beta: sol.w, intercept: -sol.rho, kind: ModelKind::Hinge })
}

pub fn svr_objective(x: &DMatrix<f64>, y: &[f64], costs: &[f64], epsilon: f64, m: &ModelParams) -> f64 {
    let pred = m.decision(x);
    0.5 * m.beta.iter().map(|b| b * b).sum::<f64>()
        + (0..y.len()).map(|i| costs[i] * ((y[i] - pred[i]).abs() - epsilon).max(0.0)).sum::<f64>()
}

pub fn hinge_objective(x: &DMatrix<f64>, labels: &[u8], costs: &[f64], m: &ModelParams) -> f64 {
    let dec = m.decision(x);
    0.5 * m.beta.iter().map(|b| b * b).sum::<f64>()
        + (0..labels.len())
            .map(|i| {
                let s = if labels[i] == 1 { 1.0 } else { -1.0 };
                costs[i] * (1.0 - s * dec[i]).max(0.0)
            })
            .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_two_point_classifier() {
        let x = DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]);
        let m = fit_hinge(&x, &[0, 1], &[1.0, 1.0], &SmoSettings::default()).unwrap();
        assert!((m.beta[0] - 1.0).abs() < 1e-6);
        assert!(m.intercept.abs() < 1e-9);
    }

    #[test]
    fn wide_tube_gives_flat_model() {
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = [0.1, 0.2, 0.3, 0.4];
        let m = fit_epsilon_svr(&x, &y, &[1.0; 4], 10.0, &SmoSettings::default()).unwrap();
        assert_eq!(m.beta, [0.0]);
    }

    #[test]
    fn zero_costs_are_ignored() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let m = fit_epsilon_svr(&x, &[0.0, 1.0, 2.0], &[0.0; 3], 0.1, &SmoSettings::default()).unwrap();
        assert_eq!(m.beta, [0.0]);
    }

    #[test]
    fn warm_start_reaches_the_cold_start_optimum() {
        let n = 200;
        let x = DMatrix::from_fn(n, 3, |i, j| ((i * 7 + j * 13) % 17) as f64 / 4.0 - 2.0);
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] - 0.5 * x[(i, 2)].powi(3) + ((i * 31) % 11) as f64 / 5.0).collect();
        let costs: Vec<f64> = (0..n).map(|i| 0.5 + (i % 3) as f64).collect();
        let warm = fit_epsilon_svr(&x, &y, &costs, 0.2, &SmoSettings::default()).unwrap();

        let data = row_major(&x);
        let mut dual = Dual { data: &data, d: 3, rows: Vec::new(), y: Vec::new(), p: Vec::new(), upper: Vec::new() };
        for sign in [1.0, -1.0] {
            for i in 0..n {
                dual.rows.push(i);
                dual.y.push(sign);
                dual.p.push(0.2 - sign * y[i]);
                dual.upper.push(costs[i]);
            }
        }
        let sol = dual.solve(None, &SmoSettings::default()).unwrap();
        let cold = ModelParams { beta: sol.w, intercept: -sol.rho, kind: ModelKind::Svr };
        let (fw, fc) = (svr_objective(&x, &y, &costs, 0.2, &warm), svr_objective(&x, &y, &costs, 0.2, &cold));
        assert!((fw - fc).abs() <= 1e-6 * fc, "{fw} vs {fc}");
        for (a, b) in warm.beta.iter().zip(&cold.beta) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn duplicate_rows_act_like_summed_costs() {
        let x = DMatrix::from_row_slice(5, 2, &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let labels = [1, 1, 0, 1, 0];
        let dup = fit_hinge(&x, &labels, &[1.0; 5], &SmoSettings::default()).unwrap();
        let rows: Vec<usize> = vec![0, 2, 3, 4];
        let once = fit_hinge(&x.select_rows(&rows), &[1, 0, 1, 0], &[2.0, 1.0, 1.0, 1.0], &SmoSettings::default()).unwrap();
        for (a, b) in dup.beta.iter().zip(&once.beta) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
