//! Gradient descent with Barzilai-Borwein trial steps and backtracking,
//! optionally projected onto the non-negative orthant.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentSettings {
    pub max_iters: usize,
    /// First trial step; later trials use the Barzilai-Borwein estimate.
    pub step_size: f64,
    /// Stop when one accepted step improves the objective by less than
    /// `tolerance * max(|J|, 1e-300)`.
    pub tolerance: f64,
    /// Stop when the projected gradient's max-norm falls below this.
    pub grad_tolerance: f64,
    pub nonnegative: bool,
}

impl Default for DescentSettings {
    fn default() -> Self {
        Self { max_iters: 1000, step_size: 1.0, tolerance: 1e-10, grad_tolerance: 0.0, nonnegative: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iter: usize,
    pub objective: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct DescentResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub trajectory: Vec<TrajectoryPoint>,
    pub converged: bool,
}

const MAX_HALVINGS: usize = 80;
const ARMIJO: f64 = 1e-4;

/// Minimizes `f`, which returns the objective and, when asked, its gradient.
pub fn minimize<F>(x0: &[f64], settings: &DescentSettings, mut f: F) -> Result<DescentResult>
where
    F: FnMut(&[f64], bool) -> Result<(f64, Option<Vec<f64>>)>,
{
    let project = |v: f64| if settings.nonnegative { v.max(0.0) } else { v };
    let mut x: Vec<f64> = x0.iter().map(|&v| project(v)).collect();
    let (mut fx, g) = f(&x, true)?;
    let mut g = g.expect("gradient requested");
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence(format!("initial objective is {fx}")));
    }
    let mut trajectory = vec![TrajectoryPoint { iter: 0, objective: fx, step: 0.0 }];
    let mut t = settings.step_size;
    let mut converged = false;

    for iter in 1..=settings.max_iters {
        let pg_norm = x
            .iter()
            .zip(&g)
            .map(|(&xi, &gi)| (xi - project(xi - gi)).abs())
            .fold(0.0, f64::max);
        if pg_norm <= settings.grad_tolerance {
            converged = true;
            break;
        }

        let mut accepted = None;
        let mut saw_non_finite = false;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(&xi, &gi)| project(xi - t * gi)).collect();
            let slope: f64 = trial.iter().zip(&x).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
            if slope >= 0.0 {
                break;
            }
            let (ft, _) = f(&trial, false)?;
            if !ft.is_finite() {
                saw_non_finite = true;
            } else if ft <= fx + ARMIJO * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            if saw_non_finite {
                return Err(Error::Divergence("objective stayed non-finite while backtracking".into()));
            }
            converged = true;
            break;
        };

        let (_, g_new) = f(&x_new, true)?;
        let g_new = g_new.expect("gradient requested");
        if g_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence("non-finite gradient".into()));
        }
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..x.len() {
            let s = x_new[i] - x[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        let improvement = fx - f_new;
        trajectory.push(TrajectoryPoint { iter, objective: f_new, step: t });
        x = x_new;
        g = g_new;
        let previous = fx;
        fx = f_new;
        t = if sy > 0.0 { (ss / sy).clamp(1e-30, 1e30) } else { (t * 2.0).min(1e30) };
        if improvement < settings.tolerance * previous.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    Ok(DescentResult { x, objective: fx, trajectory, converged })
}

/// Writes `iter,J,step` rows.
pub fn write_trajectory(points: &[TrajectoryPoint], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "J", "step"])?;
    for t in points {
        w.write_record([t.iter.to_string(), t.objective.to_string(), t.step.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_quadratic() {
        let s = DescentSettings { nonnegative: false, tolerance: 0.0, grad_tolerance: 1e-12, ..Default::default() };
        let r = minimize(&[5.0, -3.0], &s, |x, _| {
            let f = (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
            Ok((f, Some(vec![2.0 * (x[0] - 1.0), 20.0 * (x[1] + 2.0)])))
        })
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-10 && (r.x[1] + 2.0).abs() < 1e-10);
        assert!(r.trajectory.windows(2).all(|w| w[1].objective <= w[0].objective));
    }

    #[test]
    fn projection_clamps_at_zero() {
        let r = minimize(&[3.0], &DescentSettings::default(), |x, _| Ok(((x[0] + 1.0).powi(2), Some(vec![2.0 * (x[0] + 1.0)]))))
            .unwrap();
        assert_eq!(r.x[0], 0.0);
    }

    #[test]
    fn non_finite_start_is_divergence() {
        let r = minimize(&[1.0], &DescentSettings::default(), |_, _| Ok((f64::NAN, Some(vec![0.0]))));
        assert!(matches!(r, Err(Error::Divergence(_))));
    }
}
