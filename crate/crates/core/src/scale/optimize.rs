//! Box-constrained minimizers used for the likelihood fits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    NelderMead,
    /// Projected descent with Armijo backtracking; directions are
    /// preconditioned by a BFGS inverse-Hessian estimate on the free set.
    #[default]
    GradientDescentWithLineSearch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub max_iters: usize,
    /// Relative change of the objective regarded as stalled.
    pub f_tol: f64,
    /// Projected-gradient infinity norm, relative to `max(1, |f|)`.
    pub grad_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Objective returning f(x) and, when requested, writing ∇f(x).
pub trait Objective {
    fn eval(&mut self, x: &[f64], grad: Option<&mut [f64]>) -> f64;
}

impl<F: FnMut(&[f64], Option<&mut [f64]>) -> f64> Objective for F {
    fn eval(&mut self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        self(x, grad)
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Components of `g` that can still move `x` inside the box.
fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| if (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0) { 0.0 } else { g[i] })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn minimize(
    method: Optimizer,
    obj: &mut impl Objective,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    stop: StopRule,
) -> Minimum {
    match method {
        Optimizer::NelderMead => nelder_mead(obj, x0, lo, hi, stop),
        Optimizer::GradientDescentWithLineSearch => projected_bfgs(obj, x0, lo, hi, stop),
    }
}

pub fn projected_bfgs(obj: &mut impl Objective, x0: &[f64], lo: &[f64], hi: &[f64], stop: StopRule) -> Minimum {
    const ARMIJO: f64 = 1e-4;
    const STALL_LIMIT: usize = 3;
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, Some(&mut g));
    let mut evaluations = 1;
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh_h = true;
    let mut stalled = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut g_new = vec![0.0; n];

    while iterations < stop.max_iters {
        let pg = projected_gradient(&x, &g, lo, hi);
        if !f.is_finite() {
            break;
        }
        if inf_norm(&pg) <= stop.grad_tol * f.abs().max(1.0) {
            converged = true;
            break;
        }
        iterations += 1;

        let free: Vec<bool> = pg.iter().zip(&g).map(|(p, q)| *p != 0.0 || *q == 0.0).collect();
        let mut dir = vec![0.0; n];
        if fresh_h {
            // Unit-length first step along steepest descent.
            let scale = inf_norm(&pg).max(f64::MIN_POSITIVE);
            for i in 0..n {
                dir[i] = -pg[i] / scale;
            }
        } else {
            for i in 0..n {
                if !free[i] {
                    continue;
                }
                let mut acc = 0.0;
                for j in 0..n {
                    if free[j] {
                        acc -= h[(i, j)] * g[j];
                    }
                }
                dir[i] = acc;
            }
            let slope: f64 = dir.iter().zip(&g).map(|(d, q)| d * q).sum();
            if !(slope < 0.0) {
                h.fill_with_identity();
                fresh_h = true;
                continue;
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-20 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            project(&mut trial, lo, hi);
            let decrease: f64 = trial.iter().zip(&x).zip(&g).map(|((t, a), q)| (t - a) * q).sum();
            let ft = obj.eval(&trial, Some(&mut g_new));
            evaluations += 1;
            if ft.is_finite() && ft <= f + ARMIJO * decrease {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }

        let Some((x_next, f_next)) = accepted else {
            if fresh_h {
                // No descent possible even along the projected gradient.
                converged = true;
                break;
            }
            h.fill_with_identity();
            fresh_h = true;
            continue;
        };

        let s = DVector::from_iterator(n, x_next.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, g_new.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if fresh_h {
                h *= sy / y.dot(&y);
                fresh_h = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 yHy + rho) s s'
            h -= rho * (&s * hy.transpose() + &hy * s.transpose());
            h += (rho * rho * yhy + rho) * (&s * s.transpose());
        }

        let rel = (f - f_next).abs() / f.abs().max(1.0);
        x = x_next;
        f = f_next;
        std::mem::swap(&mut g, &mut g_new);
        if rel <= stop.f_tol {
            stalled += 1;
            if stalled >= STALL_LIMIT {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    let grad_norm = inf_norm(&projected_gradient(&x, &g, lo, hi));
    Minimum { x, f, iterations, evaluations, grad_norm, converged }
}

/// Nelder-Mead on the box, with vertices clamped after every move.
pub fn nelder_mead(obj: &mut impl Objective, x0: &[f64], lo: &[f64], hi: &[f64], stop: StopRule) -> Minimum {
    let n = x0.len();
    let mut evaluations = 0;
    let mut eval = |p: &[f64], evaluations: &mut usize| {
        *evaluations += 1;
        let v = obj.eval(p, None);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    let mut start = x0.to_vec();
    project(&mut start, lo, hi);
    let mut simplex: Vec<Vec<f64>> = vec![start.clone()];
    for i in 0..n {
        let mut v = start.clone();
        let span = hi[i] - lo[i];
        let step = 0.5_f64.min(0.25 * span);
        v[i] = if v[i] + step <= hi[i] { v[i] + step } else { v[i] - step };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p, &mut evaluations)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < stop.max_iters {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[n] - values[0]).abs();
        let diameter = simplex[1..]
            .iter()
            .map(|v| inf_norm(&v.iter().zip(&simplex[0]).map(|(a, b)| a - b).collect::<Vec<_>>()))
            .fold(0.0, f64::max);
        if spread <= stop.f_tol * values[0].abs().max(1.0) && diameter <= 1e-7 {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect();
            project(&mut p, lo, hi);
            p
        };

        let reflected = along(-1.0);
        let fr = eval(&reflected, &mut evaluations);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = eval(&expanded, &mut evaluations);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let p = along(-0.5);
            let v = eval(&p, &mut evaluations);
            (p, v)
        } else {
            let p = along(0.5);
            let v = eval(&p, &mut evaluations);
            (p, v)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for i in 1..=n {
            let p: Vec<f64> = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
            values[i] = eval(&p, &mut evaluations);
            simplex[i] = p;
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    let x = simplex[best].clone();
    let mut g = vec![0.0; n];
    let f = obj.eval(&x, Some(&mut g));
    evaluations += 1;
    let grad_norm = inf_norm(&projected_gradient(&x, &g, lo, hi));
    Minimum { x, f, iterations, evaluations, grad_norm, converged }
}
