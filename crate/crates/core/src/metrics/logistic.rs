use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::correlation::srcc;
use crate::error::{Error, Result};

/// `L(x) = b1 + (b2 - b1) / (1 + exp(-b3 (x - b4)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logistic4 {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
}

impl Logistic4 {
    pub fn eval(&self, x: f64) -> f64 {
        self.b1 + (self.b2 - self.b1) / (1.0 + (-self.b3 * (x - self.b4)).exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub params: Logistic4,
    pub predictions: Vec<f64>,
    pub rmse: f64,
    pub iterations: usize,
}

const MAX_ITERS: usize = 2000;

struct Problem<'a> {
    u: &'a [f64],
    y: &'a [f64],
}

impl Problem<'_> {
    /// Parameters on the standardized abscissa: (b1, b2, c3, c4).
    fn sse(&self, p: &Vector4<f64>) -> f64 {
        self.u
            .iter()
            .zip(self.y)
            .map(|(&u, &y)| {
                let g = 1.0 / (1.0 + (-p[2] * (u - p[3])).exp());
                let r = p[0] + (p[1] - p[0]) * g - y;
                r * r
            })
            .sum()
    }

    fn normal_equations(&self, p: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (&u, &y) in self.u.iter().zip(self.y) {
            let g = 1.0 / (1.0 + (-p[2] * (u - p[3])).exp());
            let r = p[0] + (p[1] - p[0]) * g - y;
            let span = p[1] - p[0];
            let gg = g * (1.0 - g);
            let j = Vector4::new(1.0 - g, g, span * gg * (u - p[3]), -span * gg * p[2]);
            jtj += j * j.transpose();
            jtr += j * r;
        }
        (jtj, jtr)
    }

    /// Levenberg-Marquardt from `start`; returns (params, sse, iterations,
    /// converged).
    fn solve(&self, start: Vector4<f64>) -> (Vector4<f64>, f64, usize, bool) {
        let mut p = start;
        let mut f = self.sse(&p);
        let mut lambda = 1e-3;
        let scale = self.y.iter().map(|v| v * v).sum::<f64>().max(1e-300);
        for iter in 0..MAX_ITERS {
            if f <= 1e-30 * scale {
                return (p, f, iter, true);
            }
            let (jtj, jtr) = self.normal_equations(&p);
            if jtr.amax() <= 1e-14 * scale.sqrt() {
                return (p, f, iter, true);
            }
            loop {
                let mut a = jtj;
                for k in 0..4 {
                    a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
                }
                let step = a.lu().solve(&(-jtr));
                if let Some(step) = step.filter(|s| s.iter().all(|v| v.is_finite())) {
                    let trial = p + step;
                    let ft = self.sse(&trial);
                    if ft.is_finite() && ft < f {
                        let rel = (f - ft) / f.max(1e-300);
                        let small_step = step.amax() <= 1e-12 * (1.0 + p.amax());
                        p = trial;
                        f = ft;
                        lambda = (lambda / 3.0).max(1e-12);
                        if rel <= 1e-15 || small_step {
                            return (p, f, iter + 1, true);
                        }
                        break;
                    }
                }
                lambda *= 4.0;
                if lambda > 1e16 {
                    // No direction reduces the residual further.
                    return (p, f, iter + 1, true);
                }
            }
        }
        (p, f, MAX_ITERS, false)
    }
}

/// Least-squares fit of a 4-parameter logistic mapping metric scores onto
/// JND values, over several deterministic starts.
pub fn fit_logistic4(scores: &[f64], jnd: &[f64]) -> Result<LogisticFit> {
    if scores.len() != jnd.len() {
        return Err(Error::Domain(format!("{} scores vs {} targets", scores.len(), jnd.len())));
    }
    if scores.len() < 5 {
        return Err(Error::Domain(format!("logistic fit needs at least 5 points, got {}", scores.len())));
    }
    if scores.iter().chain(jnd).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logistic fit input".into()));
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let sd = (scores.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return Err(Error::Degenerate("constant metric scores".into()));
    }
    let u: Vec<f64> = scores.iter().map(|v| (v - mean) / sd).collect();
    let lo = jnd.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = jnd.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let sign = match srcc(scores, jnd) {
        Ok(r) if r < 0.0 => -1.0,
        _ => 1.0,
    };
    let mut sorted_u = u.clone();
    sorted_u.sort_by(f64::total_cmp);
    let q = |p: f64| sorted_u[((sorted_u.len() - 1) as f64 * p).round() as usize];

    let problem = Problem { u: &u, y: jnd };
    let mut best: Option<(Vector4<f64>, f64, usize, bool)> = None;
    for &slope in &[1.5, 4.0, 0.5] {
        for &center in &[q(0.5), q(0.25), q(0.75)] {
            let start = Vector4::new(lo, hi, sign * slope, center);
            let run = problem.solve(start);
            // Lowest residual wins; a converged but worse stationary point
            // (e.g. a saturated, flat curve) must not beat a better fit that
            // is still crawling along an asymptote.
            let better = match &best {
                None => true,
                Some(b) => run.1 < b.1 * (1.0 - 1e-12) || (run.3 && !b.3 && run.1 <= b.1 * (1.0 + 1e-12)),
            };
            if better {
                best = Some(run);
            }
        }
    }
    let (p, sse, iterations, converged) = best.expect("starts are non-empty");
    let params = Logistic4 { b1: p[0], b2: p[1], b3: p[2] / sd, b4: mean + p[3] * sd };
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            nll: sse,
            grad_norm: f64::NAN,
            best: vec![params.b1, params.b2, params.b3, params.b4],
        });
    }
    let predictions = scores.iter().map(|&x| params.eval(x)).collect();
    Ok(LogisticFit { params, predictions, rmse: (sse / n).sqrt(), iterations })
}
