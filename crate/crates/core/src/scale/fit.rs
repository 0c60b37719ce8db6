use std::collections::BTreeMap;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{ResponseSet, SourceData};
use super::likelihood::{nll_with_gradient, ParamLayout};
use super::model::{Boosting, CodecCurve, FitStats, ScaleModel, SourceModel};
use super::observer::JND_UNIT_Z;
use super::optimize::{minimize, Minimum, Optimizer, StopRule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Bounds { lo, hi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub alpha: Bounds,
    pub beta: Bounds,
    pub gamma1: Bounds,
    pub gamma2: Bounds,
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            alpha: Bounds::new(1e-4, 50.0),
            beta: Bounds::new(1e-4, 20.0),
            gamma1: Bounds::new(1e-4, 20.0),
            gamma2: Bounds::new(0.0, 20.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Default for InitialParams {
    fn default() -> Self {
        InitialParams { alpha: 1.0, beta: 1.0, gamma1: 2.0, gamma2: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub optimizer: Optimizer,
    pub max_iters: usize,
    /// Relative NLL change treated as converged.
    pub tolerance: f64,
    /// Projected-gradient norm treated as converged, relative to max(1, NLL).
    pub grad_tolerance: f64,
    pub bounds: ParamBounds,
    pub init: InitialParams,
    pub multistart: usize,
    pub seed: u64,
    pub jnd_unit_z: f64,
    pub boosting_per_codec: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            optimizer: Optimizer::default(),
            max_iters: 2000,
            tolerance: 1e-9,
            grad_tolerance: 1e-8,
            bounds: ParamBounds::default(),
            init: InitialParams::default(),
            multistart: 5,
            seed: 0,
            jnd_unit_z: JND_UNIT_Z,
            boosting_per_codec: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        for (name, r) in [("alpha", b.alpha), ("beta", b.beta), ("gamma1", b.gamma1)] {
            if !(r.lo > 0.0 && r.lo < r.hi && r.hi.is_finite()) {
                return Err(Error::Config(format!("{name} bounds must satisfy 0 < lo < hi < inf")));
            }
        }
        if !(b.gamma2.lo >= 0.0 && b.gamma2.lo < b.gamma2.hi && b.gamma2.hi.is_finite()) {
            return Err(Error::Config("gamma2 bounds must satisfy 0 <= lo < hi < inf".into()));
        }
        if self.max_iters == 0 || self.multistart == 0 {
            return Err(Error::Config("max_iters and multistart must be positive".into()));
        }
        if !(self.jnd_unit_z > 0.0 && self.jnd_unit_z.is_finite()) {
            return Err(Error::Config("jnd_unit_z must be positive".into()));
        }
        if !(self.tolerance > 0.0 && self.grad_tolerance > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        Ok(())
    }

    fn stop_rule(&self) -> StopRule {
        StopRule { max_iters: self.max_iters, f_tol: self.tolerance, grad_tol: self.grad_tolerance }
    }

    fn box_for(&self, layout: &ParamLayout) -> (Vec<f64>, Vec<f64>) {
        let b = &self.bounds;
        let mut lo = vec![0.0; layout.len()];
        let mut hi = vec![0.0; layout.len()];
        for c in 0..layout.codecs {
            lo[layout.ln_alpha(c)] = b.alpha.lo.ln();
            hi[layout.ln_alpha(c)] = b.alpha.hi.ln();
            lo[layout.ln_beta(c)] = b.beta.lo.ln();
            hi[layout.ln_beta(c)] = b.beta.hi.ln();
        }
        for g in 0..layout.groups() {
            lo[layout.ln_gamma1(g)] = b.gamma1.lo.ln();
            hi[layout.ln_gamma1(g)] = b.gamma1.hi.ln();
            lo[layout.gamma2(g)] = b.gamma2.lo;
            hi[layout.gamma2(g)] = b.gamma2.hi;
        }
        (lo, hi)
    }

    /// Start vectors: the configured initialization, then seeded draws.
    fn starts(&self, layout: &ParamLayout, source_index: usize) -> Vec<Vec<f64>> {
        let init = &self.init;
        let base = layout.encode(
            &vec![CodecCurve { alpha: init.alpha, beta: init.beta }; layout.codecs],
            &vec![Boosting { gamma1: init.gamma1, gamma2: init.gamma2 }; layout.groups()],
        );
        let mut out = vec![base];
        for k in 1..self.multistart {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(((source_index as u64) << 32) | k as u64);
            let curves: Vec<CodecCurve> = (0..layout.codecs)
                .map(|_| CodecCurve {
                    alpha: rng.random_range(0.5f64.ln()..5f64.ln()).exp(),
                    beta: rng.random_range(0.3f64.ln()..4f64.ln()).exp(),
                })
                .collect();
            let boosting: Vec<Boosting> = (0..layout.groups())
                .map(|_| Boosting { gamma1: rng.random_range(1.0..4.0), gamma2: rng.random_range(0.0..0.5) })
                .collect();
            out.push(layout.encode(&curves, &boosting));
        }
        out
    }
}

/// Minimizes one source's NLL from each start and keeps the best
/// converged run.
pub(crate) fn fit_source_from(
    data: &SourceData,
    config: &FitConfig,
    starts: &[Vec<f64>],
) -> Result<(Vec<f64>, FitStats)> {
    let layout = ParamLayout::new(data.codecs.len(), config.boosting_per_codec);
    let (lo, hi) = config.box_for(&layout);
    let unit_z = config.jnd_unit_z;
    let mut objective = |theta: &[f64], grad: Option<&mut [f64]>| nll_with_gradient(theta, data, &layout, unit_z, grad);

    let mut best: Option<Minimum> = None;
    let mut best_any: Option<Minimum> = None;
    let (mut iterations, mut evaluations) = (0, 0);
    for start in starts {
        let m = minimize(config.optimizer, &mut objective, start, &lo, &hi, config.stop_rule());
        iterations += m.iterations;
        evaluations += m.evaluations;
        let better = |cur: &Option<Minimum>| cur.as_ref().is_none_or(|b| m.f < b.f);
        if better(&best_any) {
            best_any = Some(m.clone());
        }
        if m.converged && better(&best) {
            best = Some(m);
        }
    }

    match best {
        Some(m) => Ok((
            m.x,
            FitStats {
                nll: m.f,
                responses: data.responses() as f64,
                iterations,
                evaluations,
                grad_norm: m.grad_norm,
                converged: true,
                starts: starts.len(),
            },
        )),
        None => {
            let m = best_any.expect("at least one start");
            let natural: Vec<f64> = layout
                .curves(&m.x)
                .iter()
                .flat_map(|c| [c.alpha, c.beta])
                .chain(layout.boosting(&m.x).iter().flat_map(|b| [b.gamma1, b.gamma2]))
                .collect();
            Err(Error::NotConverged { iterations, nll: m.f, grad_norm: m.grad_norm, best: natural })
        }
    }
}

fn fit_source(data: &SourceData, config: &FitConfig, source_index: usize) -> Result<SourceModel> {
    if data.responses() == 0 {
        return Err(Error::EmptyResponses(Some(data.source_id.clone())));
    }
    if !data.has_plain() {
        warn!("source {}: no plain (PTC) responses; the boosting transfer absorbs the JND unit", data.source_id);
    } else if !data.has_boosted() {
        warn!("source {}: no boosted (BTC) responses; boosting transfer left at its start value", data.source_id);
    }
    let layout = ParamLayout::new(data.codecs.len(), config.boosting_per_codec);
    let starts = config.starts(&layout, source_index);
    let (theta, stats) = fit_source_from(data, config, &starts)?;
    Ok(layout.to_source_model(&theta, data, stats))
}

/// Joint maximum-likelihood fit of every source's plain curves and
/// boosting transfer. Sources are independent and fitted in parallel.
pub fn fit(data: &ResponseSet, config: &FitConfig) -> Result<ScaleModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyResponses(None));
    }
    let fitted: Vec<Result<(String, SourceModel)>> = data
        .sources
        .par_iter()
        .enumerate()
        .filter(|(_, s)| s.responses() > 0)
        .map(|(i, s)| fit_source(s, config, i).map(|m| (s.source_id.clone(), m)))
        .collect();
    let sources: BTreeMap<String, SourceModel> = fitted.into_iter().collect::<Result<_>>()?;
    Ok(ScaleModel { jnd_unit_z: config.jnd_unit_z, sources })
}

/// Refits a source from a given parameter vector with a single start.
pub(crate) fn refit_source(data: &SourceData, config: &FitConfig, start: &[f64]) -> Result<SourceModel> {
    let layout = ParamLayout::new(data.codecs.len(), config.boosting_per_codec);
    let (theta, stats) = fit_source_from(data, config, &[start.to_vec()])?;
    Ok(layout.to_source_model(&theta, data, stats))
}
