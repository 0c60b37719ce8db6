//! Negative log-likelihood of the unified plain/boosted model for one
//! source, with its analytic gradient.
//!
//! Parameters live in an unconstrained-by-sign vector: `ln alpha`, `ln beta`
//! per codec, then `ln gamma1`, `gamma2` per boosting group. `gamma2` stays
//! linear because its lower bound is 0.

use std::collections::BTreeMap;

use super::data::{ResponseSet, SourceData};
use super::model::{Boosting, BoostingTransfer, CodecCurve, FitStats, ScaleModel, SourceModel};
use super::observer::neg_log_cdf;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamLayout {
    pub codecs: usize,
    pub per_codec_boosting: bool,
}

impl ParamLayout {
    pub fn new(codecs: usize, per_codec_boosting: bool) -> Self {
        ParamLayout { codecs, per_codec_boosting }
    }

    pub fn groups(&self) -> usize {
        if self.per_codec_boosting {
            self.codecs
        } else {
            1
        }
    }

    pub fn len(&self) -> usize {
        2 * self.codecs + 2 * self.groups()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ln_alpha(&self, codec: usize) -> usize {
        2 * codec
    }

    pub fn ln_beta(&self, codec: usize) -> usize {
        2 * codec + 1
    }

    pub fn group(&self, codec: usize) -> usize {
        if self.per_codec_boosting {
            codec
        } else {
            0
        }
    }

    pub fn ln_gamma1(&self, group: usize) -> usize {
        2 * self.codecs + 2 * group
    }

    pub fn gamma2(&self, group: usize) -> usize {
        2 * self.codecs + 2 * group + 1
    }

    /// Natural-scale parameters into the optimizer vector.
    pub fn encode(&self, curves: &[CodecCurve], boosting: &[Boosting]) -> Vec<f64> {
        let mut theta = vec![0.0; self.len()];
        for (c, curve) in curves.iter().enumerate() {
            theta[self.ln_alpha(c)] = curve.alpha.ln();
            theta[self.ln_beta(c)] = curve.beta.ln();
        }
        for (g, b) in boosting.iter().enumerate() {
            theta[self.ln_gamma1(g)] = b.gamma1.ln();
            theta[self.gamma2(g)] = b.gamma2;
        }
        theta
    }

    pub fn curves(&self, theta: &[f64]) -> Vec<CodecCurve> {
        (0..self.codecs)
            .map(|c| CodecCurve { alpha: theta[self.ln_alpha(c)].exp(), beta: theta[self.ln_beta(c)].exp() })
            .collect()
    }

    pub fn boosting(&self, theta: &[f64]) -> Vec<Boosting> {
        (0..self.groups())
            .map(|g| Boosting { gamma1: theta[self.ln_gamma1(g)].exp(), gamma2: theta[self.gamma2(g)] })
            .collect()
    }

    pub fn to_source_model(&self, theta: &[f64], data: &SourceData, stats: FitStats) -> SourceModel {
        let curves = self.curves(theta);
        let boosting = self.boosting(theta);
        let codecs: BTreeMap<String, CodecCurve> = data.codecs.iter().cloned().zip(curves).collect();
        let boosting = if self.per_codec_boosting {
            BoostingTransfer::PerCodec { codecs: data.codecs.iter().cloned().zip(boosting).collect() }
        } else {
            BoostingTransfer::Shared(boosting[0])
        };
        SourceModel { codecs, boosting, stats }
    }

    /// Recovers the optimizer vector from a fitted model.
    pub fn from_source_model(&self, model: &SourceModel, data: &SourceData) -> Result<Vec<f64>> {
        let mut curves = Vec::with_capacity(data.codecs.len());
        for codec in &data.codecs {
            curves.push(
                *model
                    .curve(codec)
                    .ok_or_else(|| Error::UnknownCodec { source_id: data.source_id.clone(), codec: codec.clone() })?,
            );
        }
        let boosting: Vec<Boosting> = if self.per_codec_boosting {
            data.codecs.iter().map(|c| model.boosting_for(c).unwrap_or(Boosting::IDENTITY)).collect()
        } else {
            vec![model.boosting_for(&data.codecs[0]).unwrap_or(Boosting::IDENTITY)]
        };
        Ok(self.encode(&curves, &boosting))
    }
}

/// Evaluates the negative log-likelihood at `theta`; when `grad` is given it
/// receives the gradient with respect to `theta`.
pub fn nll_with_gradient(
    theta: &[f64],
    data: &SourceData,
    layout: &ParamLayout,
    unit_z: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let groups = layout.boosting(theta);

    // Per-stimulus plain and boosted scale values with their partials.
    struct Eval {
        d: f64,
        t: f64,
        dt_dd: f64,
        codec: usize,
        bitrate: f64,
    }
    let evals: Vec<Eval> = data
        .stimuli
        .iter()
        .map(|s| {
            let alpha = theta[layout.ln_alpha(s.codec)].exp();
            let beta = theta[layout.ln_beta(s.codec)].exp();
            let d = alpha * (-beta * s.bitrate).exp();
            let b = groups[layout.group(s.codec)];
            Eval { d, t: b.apply(d), dt_dd: b.gamma1 + 2.0 * b.gamma2 * d, codec: s.codec, bitrate: s.bitrate }
        })
        .collect();

    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|x| *x = 0.0);
    }

    let mut total = 0.0;
    for t in &data.tallies {
        let (wl, wr) = t.weights();
        if wl + wr == 0.0 {
            continue;
        }
        let scale = |side: Option<usize>| match side {
            None => 0.0,
            Some(i) if t.boosted => evals[i].t,
            Some(i) => evals[i].d,
        };
        let delta = scale(t.left) - scale(t.right);
        let x = unit_z * delta;
        let (nl, dl) = neg_log_cdf(x);
        let (nr, dr) = neg_log_cdf(-x);
        total += wl * nl + wr * nr;

        if let Some(g) = grad.as_deref_mut() {
            let d_delta = unit_z * (wl * dl - wr * dr);
            if d_delta == 0.0 {
                continue;
            }
            for (side, sign) in [(t.left, 1.0), (t.right, -1.0)] {
                let Some(i) = side else { continue };
                let e = &evals[i];
                let coef = sign * d_delta;
                // d(scale)/d(d): 1 when plain, t'(d) when boosted.
                let ds_dd = if t.boosted { e.dt_dd } else { 1.0 };
                g[layout.ln_alpha(e.codec)] += coef * ds_dd * e.d;
                let beta = theta[layout.ln_beta(e.codec)].exp();
                g[layout.ln_beta(e.codec)] += coef * ds_dd * (-beta * e.bitrate * e.d);
                if t.boosted {
                    let grp = layout.group(e.codec);
                    g[layout.ln_gamma1(grp)] += coef * groups[grp].gamma1 * e.d;
                    g[layout.gamma2(grp)] += coef * e.d * e.d;
                }
            }
        }
    }
    total
}

/// Negative log-likelihood of a fitted model on a response set (sum over
/// sources). Sources absent from the model are an error.
pub fn negative_log_likelihood(model: &ScaleModel, data: &ResponseSet) -> Result<f64> {
    let mut total = 0.0;
    for src in &data.sources {
        let sm = model.sources.get(&src.source_id).ok_or_else(|| Error::UnknownSource(src.source_id.clone()))?;
        let per_codec = matches!(sm.boosting, BoostingTransfer::PerCodec { .. });
        let layout = ParamLayout::new(src.codecs.len(), per_codec);
        let theta = layout.from_source_model(sm, src)?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("source {}", src.source_id)));
        }
        total += nll_with_gradient(&theta, src, &layout, model.jnd_unit_z, None);
    }
    Ok(total)
}
