//! Percentile bootstrap over per-question response resampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{ResponseSet, SourceData};
use super::fit::{refit_source, FitConfig};
use super::likelihood::ParamLayout;
use super::model::{ScaleModel, SourceModel};
use crate::dataset::ExperimentDesign;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Evaluation points per (source, codec), spread over the ladder range.
    pub grid_points: usize,
    pub max_failure_fraction: f64,
    pub level: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replicates: 1000, seed: 0, grid_points: 28, max_failure_fraction: 0.05, level: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub bitrate: f64,
    pub jnd: f64,
    pub jnd_lo: f64,
    pub jnd_hi: f64,
    pub boosted_jnd: f64,
    pub boosted_lo: f64,
    pub boosted_hi: f64,
}

impl BandPoint {
    pub fn width(&self) -> f64 {
        self.jnd_hi - self.jnd_lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandCurve {
    pub source_id: String,
    pub codec_id: String,
    pub points: Vec<BandPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapBand {
    pub requested: usize,
    pub used: usize,
    pub failed: usize,
    pub curves: Vec<BandCurve>,
}

/// Evaluation grid: `points` bitrates spanning each codec's ladder.
pub fn bitrate_grid(design: &ExperimentDesign, model: &ScaleModel, points: usize) -> Vec<(String, String, Vec<f64>)> {
    let mut out = Vec::new();
    for (source, sm) in &model.sources {
        for codec in sm.codecs.keys() {
            let Some((lo, hi)) = design.ladder_range(source, codec) else { continue };
            let grid = if points <= 1 || hi == lo {
                vec![lo]
            } else {
                (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect()
            };
            out.push((source.clone(), codec.clone(), grid));
        }
    }
    out
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let (i, frac) = (h.floor() as usize, h - h.floor());
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

fn multinomial_resample(data: &SourceData, rng: &mut ChaCha8Rng) -> SourceData {
    let counts: Vec<(u32, u32, u32)> = data
        .tallies
        .iter()
        .map(|t| {
            let n = t.total() as u64;
            if n == 0 {
                return (0, 0, 0);
            }
            let nf = n as f64;
            let l = Binomial::new(n, t.n_left as f64 / nf).unwrap().sample(rng);
            let rest = n - l;
            let other = (t.n_right + t.n_not_sure) as f64;
            let r = if rest == 0 || other == 0.0 {
                0
            } else {
                Binomial::new(rest, (t.n_right as f64 / other).min(1.0)).unwrap().sample(rng)
            };
            (l as u32, r as u32, (rest - r) as u32)
        })
        .collect();
    data.with_counts(counts)
}

/// Resamples responses with replacement within every question, refits
/// each replicate from the full-data optimum with a single start and
/// collects percentile bands. Replicate `i` draws from stream `i` of the
/// master seed, so results do not depend on thread count.
pub fn bootstrap(
    data: &ResponseSet,
    full: &ScaleModel,
    design: &ExperimentDesign,
    fit_config: &FitConfig,
    config: &BootstrapConfig,
) -> Result<BootstrapBand> {
    if config.replicates == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(Error::Config("bootstrap level must lie in (0, 1)".into()));
    }
    let grid = bitrate_grid(design, full, config.grid_points);
    let sources: Vec<(&SourceData, &SourceModel, Vec<f64>)> = data
        .sources
        .iter()
        .filter(|s| s.responses() > 0)
        .map(|s| {
            let sm = full.sources.get(&s.source_id).ok_or_else(|| Error::UnknownSource(s.source_id.clone()))?;
            let layout = ParamLayout::new(s.codecs.len(), fit_config.boosting_per_codec);
            Ok((s, sm, layout.from_source_model(sm, s)?))
        })
        .collect::<Result<_>>()?;

    let replicate_cfg = FitConfig { multistart: 1, ..fit_config.clone() };

    let replicate = |index: usize| -> Option<Vec<(f64, f64)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(index as u64);
        let mut refit = full.clone();
        for (src, _, start) in &sources {
            let resampled = multinomial_resample(src, &mut rng);
            let m = refit_source(&resampled, &replicate_cfg, start).ok()?;
            refit.sources.insert(src.source_id.clone(), m);
        }
        let mut values = Vec::new();
        for (source, codec, rates) in &grid {
            for &r in rates {
                values.push((refit.jnd_at(source, codec, r).ok()?, refit.boosted_jnd_at(source, codec, r).ok()?));
            }
        }
        Some(values)
    };

    let results: Vec<Option<Vec<(f64, f64)>>> = (0..config.replicates).into_par_iter().map(replicate).collect();
    let failed = results.iter().filter(|r| r.is_none()).count();
    if failed as f64 > config.max_failure_fraction * config.replicates as f64 {
        return Err(Error::BootstrapFailures { failed, requested: config.replicates });
    }
    let ok: Vec<Vec<(f64, f64)>> = results.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(Error::BootstrapFailures { failed, requested: config.replicates });
    }

    let tail = 0.5 * (1.0 - config.level);
    let mut curves = Vec::with_capacity(grid.len());
    let mut offset = 0;
    for (source, codec, rates) in &grid {
        let mut points = Vec::with_capacity(rates.len());
        for (k, &r) in rates.iter().enumerate() {
            let mut plain: Vec<f64> = ok.iter().map(|v| v[offset + k].0).collect();
            let mut boosted: Vec<f64> = ok.iter().map(|v| v[offset + k].1).collect();
            plain.sort_by(f64::total_cmp);
            boosted.sort_by(f64::total_cmp);
            points.push(BandPoint {
                bitrate: r,
                jnd: full.jnd_at(source, codec, r)?,
                jnd_lo: quantile_sorted(&plain, tail),
                jnd_hi: quantile_sorted(&plain, 1.0 - tail),
                boosted_jnd: full.boosted_jnd_at(source, codec, r)?,
                boosted_lo: quantile_sorted(&boosted, tail),
                boosted_hi: quantile_sorted(&boosted, 1.0 - tail),
            });
        }
        offset += rates.len();
        curves.push(BandCurve { source_id: source.clone(), codec_id: codec.clone(), points });
    }

    Ok(BootstrapBand { requested: config.replicates, used: ok.len(), failed, curves })
}
