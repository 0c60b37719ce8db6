use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::correlation::{plcc, srcc};
use super::logistic::{fit_logistic4, Logistic4};
use crate::dataset::{ExperimentDesign, JndTable, MetricScoreTable};
use crate::error::{Error, Result};

/// How compressed stimuli are grouped before computing correlations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme", content = "codec")]
pub enum Grouping {
    /// A single group over every stimulus.
    Overall,
    PerSource,
    PerCodec,
    /// Only stimuli of one codec, one group per source.
    CodecOnly(String),
}

impl Grouping {
    pub fn label(&self) -> String {
        match self {
            Grouping::Overall => "overall".into(),
            Grouping::PerSource => "per_source".into(),
            Grouping::PerCodec => "per_codec".into(),
            Grouping::CodecOnly(c) => format!("{c}_only"),
        }
    }

    /// Group key of a stimulus, or `None` when the scheme excludes it.
    fn key(&self, source: &str, codec: &str) -> Option<String> {
        match self {
            Grouping::Overall => Some("all".into()),
            Grouping::PerSource => Some(source.into()),
            Grouping::PerCodec => Some(codec.into()),
            Grouping::CodecOnly(c) => (c == codec).then(|| source.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub groupings: Vec<Grouping>,
    /// Fit the logistic mapping once on all stimuli instead of per group.
    pub global_logistic: bool,
    pub alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            groupings: vec![
                Grouping::Overall,
                Grouping::PerSource,
                Grouping::PerCodec,
                Grouping::CodecOnly("jpeg_ai".into()),
            ],
            global_logistic: false,
            alpha: 0.05,
        }
    }
}

/// Correlations of one metric within one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCorrelation {
    pub scheme: String,
    pub group: String,
    pub metric: String,
    pub n: usize,
    /// Absolute PLCC after the logistic mapping; NaN when undefined.
    pub plcc: f64,
    /// Absolute SRCC on raw scores; NaN when undefined.
    pub srcc: f64,
    pub logistic: Option<Logistic4>,
    pub note: Option<String>,
}

/// Unweighted mean over the groups of one scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub metric: String,
    pub groups: usize,
    pub mean_plcc: f64,
    pub mean_srcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<GroupCorrelation>,
    pub summaries: Vec<SchemeSummary>,
}

fn mean_finite(v: impl Iterator<Item = f64>) -> (f64, usize) {
    let (s, n) = v.filter(|x| x.is_finite()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (if n == 0 { f64::NAN } else { s / n as f64 }, n)
}

/// PLCC/SRCC of each metric against the JND values under each grouping.
pub fn evaluate(
    design: &ExperimentDesign,
    scores: &MetricScoreTable,
    jnd: &JndTable,
    cfg: &EvalConfig,
) -> Result<MetricReport> {
    if scores.items() != jnd.items() {
        return Err(Error::Domain("metric scores and JND values cover different stimuli".into()));
    }
    let globals: Vec<Option<Logistic4>> = if cfg.global_logistic {
        (0..scores.metrics().len())
            .map(|m| {
                let mut note = None;
                let l = usable_logistic(scores.column(m), jnd.values(), &mut note)?;
                if let Some(n) = note {
                    log::warn!("global logistic for {}: {n}", scores.metrics()[m]);
                }
                Ok(Some(l))
            })
            .collect::<Result<_>>()?
    } else {
        vec![None; scores.metrics().len()]
    };

    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for grouping in &cfg.groupings {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (pos, &idx) in scores.items().iter().enumerate() {
            let s = design.stimulus(idx);
            if let Some(k) = grouping.key(&s.source_id, &s.codec_id) {
                groups.entry(k).or_default().push(pos);
            }
        }
        if groups.is_empty() {
            log::warn!("grouping {} selects no stimuli", grouping.label());
        }
        for (m, metric) in scores.metrics().iter().enumerate() {
            let col = scores.column(m);
            let first_row = rows.len();
            for (group, members) in &groups {
                let x: Vec<f64> = members.iter().map(|&p| col[p]).collect();
                let y: Vec<f64> = members.iter().map(|&p| jnd.values()[p]).collect();
                rows.push(group_row(grouping, group, metric, &x, &y, globals[m]));
            }
            let mine = &rows[first_row..];
            let (mean_plcc, groups_n) = mean_finite(mine.iter().map(|r| r.plcc));
            let (mean_srcc, _) = mean_finite(mine.iter().map(|r| r.srcc));
            summaries.push(SchemeSummary {
                scheme: grouping.label(),
                metric: metric.clone(),
                groups: groups_n,
                mean_plcc,
                mean_srcc,
            });
        }
    }
    Ok(MetricReport { rows, summaries })
}

/// Fitted mapping, falling back to the best iterate when the fit runs out of
/// iterations (typically an asymptote drifting off to infinity); the
/// fallback is recorded in `note`.
fn usable_logistic(x: &[f64], y: &[f64], note: &mut Option<String>) -> Result<Logistic4> {
    match fit_logistic4(x, y) {
        Ok(f) => Ok(f.params),
        Err(Error::NotConverged { iterations, best, .. }) if best.iter().all(|v| v.is_finite()) => {
            *note = Some(format!("logistic: best iterate after {iterations} iterations (not converged)"));
            Ok(Logistic4 { b1: best[0], b2: best[1], b3: best[2], b4: best[3] })
        }
        Err(e) => Err(e),
    }
}

fn group_row(
    grouping: &Grouping,
    group: &str,
    metric: &str,
    x: &[f64],
    y: &[f64],
    global: Option<Logistic4>,
) -> GroupCorrelation {
    let mut notes = Vec::new();
    let srcc_v = srcc(x, y).map(f64::abs).unwrap_or_else(|e| {
        notes.push(format!("srcc: {e}"));
        f64::NAN
    });
    let mut fit_note = None;
    let mapping = match global {
        Some(l) => Ok(l),
        None => usable_logistic(x, y, &mut fit_note),
    };
    notes.extend(fit_note);
    let (plcc_v, logistic) = match mapping {
        Ok(l) => {
            let pred: Vec<f64> = x.iter().map(|&v| l.eval(v)).collect();
            let r = plcc(&pred, y).map(f64::abs).unwrap_or_else(|e| {
                notes.push(format!("plcc: {e}"));
                f64::NAN
            });
            (r, Some(l))
        }
        Err(e) => {
            notes.push(format!("logistic: {e}"));
            (f64::NAN, None)
        }
    };
    GroupCorrelation {
        scheme: grouping.label(),
        group: group.to_string(),
        metric: metric.to_string(),
        n: x.len(),
        plcc: plcc_v,
        srcc: srcc_v,
        logistic,
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    }
}
