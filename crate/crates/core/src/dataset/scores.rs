use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use super::io::{deserialize_rows, open};
use super::{ExperimentDesign, StimulusIdx};
use crate::error::{Error, Result};

const MAX_LISTED: usize = 20;

/// Objective metric scores over every compressed stimulus of a design.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricScoreTable {
    items: Vec<StimulusIdx>,
    metrics: Vec<String>,
    /// `scores[m][i]` is metric `m` on `items[i]`.
    scores: Vec<Vec<f64>>,
}

impl MetricScoreTable {
    /// Builds a table from per-metric columns aligned with
    /// [`ExperimentDesign::compressed_stimuli`].
    pub fn new(design: &ExperimentDesign, columns: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let items = design.compressed_stimuli();
        for (name, col) in &columns {
            if col.len() != items.len() {
                return Err(Error::validation(
                    "metrics",
                    None,
                    format!("metric {name} has {} values for {} stimuli", col.len(), items.len()),
                ));
            }
        }
        let (metrics, scores) = columns.into_iter().unzip();
        Ok(MetricScoreTable { items, metrics, scores })
    }

    pub fn items(&self) -> &[StimulusIdx] {
        &self.items
    }

    pub fn metrics(&self) -> &[String] {
        &self.metrics
    }

    pub fn scores(&self, metric: &str) -> Option<&[f64]> {
        self.metrics.iter().position(|m| m == metric).map(|i| self.scores[i].as_slice())
    }

    pub fn column(&self, metric_idx: usize) -> &[f64] {
        &self.scores[metric_idx]
    }

    /// The rows whose stimulus satisfies `keep`, in the same order.
    pub fn subset(&self, keep: impl Fn(StimulusIdx) -> bool) -> Self {
        let pos: Vec<usize> = (0..self.items.len()).filter(|&p| keep(self.items[p])).collect();
        MetricScoreTable {
            items: pos.iter().map(|&p| self.items[p]).collect(),
            metrics: self.metrics.clone(),
            scores: self.scores.iter().map(|col| pos.iter().map(|&p| col[p]).collect()).collect(),
        }
    }
}

/// Perceived distortion in JND per compressed stimulus, aligned with
/// [`ExperimentDesign::compressed_stimuli`].
#[derive(Debug, Clone, PartialEq)]
pub struct JndTable {
    items: Vec<StimulusIdx>,
    values: Vec<f64>,
}

impl JndTable {
    pub fn new(design: &ExperimentDesign, values: Vec<f64>) -> Result<Self> {
        let items = design.compressed_stimuli();
        if values.len() != items.len() {
            return Err(Error::validation("jnd", None, format!("{} values for {} stimuli", values.len(), items.len())));
        }
        Ok(JndTable { items, values })
    }

    /// Evaluates `f` on every compressed stimulus.
    pub fn from_fn(design: &ExperimentDesign, mut f: impl FnMut(StimulusIdx) -> Result<f64>) -> Result<Self> {
        let items = design.compressed_stimuli();
        let values = items.iter().map(|&i| f(i)).collect::<Result<Vec<_>>>()?;
        Ok(JndTable { items, values })
    }

    pub fn items(&self) -> &[StimulusIdx] {
        &self.items
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The rows whose stimulus satisfies `keep`, in the same order.
    pub fn subset(&self, keep: impl Fn(StimulusIdx) -> bool) -> Self {
        let (items, values) =
            self.items.iter().zip(&self.values).filter(|(&i, _)| keep(i)).map(|(&i, &v)| (i, v)).unzip();
        JndTable { items, values }
    }
}

#[derive(Debug, Deserialize)]
struct RawMetric {
    source_id: String,
    codec_id: String,
    distortion_level: u8,
    metric_name: String,
    score: f64,
}

#[derive(Debug, Deserialize)]
struct RawJnd {
    source_id: String,
    codec_id: String,
    distortion_level: u8,
    jnd: f64,
}

pub fn load_metric_scores(path: &Path, design: &ExperimentDesign) -> Result<MetricScoreTable> {
    read_metric_scores(open(path)?, design, &path.display().to_string())
}

/// Reads long-format metric scores. Every listed metric must cover every
/// compressed stimulus exactly once.
pub fn read_metric_scores<R: Read>(rdr: R, design: &ExperimentDesign, file: &str) -> Result<MetricScoreTable> {
    let items = design.compressed_stimuli();
    let position: HashMap<StimulusIdx, usize> = items.iter().enumerate().map(|(p, &i)| (i, p)).collect();

    let mut columns: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for (row, r) in deserialize_rows::<_, RawMetric>(rdr, file)? {
        if r.distortion_level == 0 {
            return Err(Error::validation(file, Some(row), "metric scores are defined for compressed stimuli only"));
        }
        if !r.score.is_finite() {
            return Err(Error::validation(file, Some(row), format!("non-finite score for {}", r.metric_name)));
        }
        let stim = design.find_stimulus(&r.source_id, &r.codec_id, r.distortion_level).ok_or_else(|| {
            Error::validation(
                file,
                Some(row),
                format!("unknown stimulus {}/{}/{}", r.source_id, r.codec_id, r.distortion_level),
            )
        })?;
        let col = columns.entry(r.metric_name.clone()).or_insert_with(|| vec![None; items.len()]);
        let cell = &mut col[position[&stim]];
        if cell.is_some() {
            return Err(Error::validation(
                file,
                Some(row),
                format!(
                    "duplicate score for {} on {}/{}/{}",
                    r.metric_name, r.source_id, r.codec_id, r.distortion_level
                ),
            ));
        }
        *cell = Some(r.score);
    }

    if columns.is_empty() {
        return Err(Error::validation(file, None, "no metric scores"));
    }

    let mut missing = Vec::new();
    for (name, col) in &columns {
        for (p, v) in col.iter().enumerate() {
            if v.is_none() {
                let s = design.stimulus(items[p]);
                missing.push(format!("{name}@{}/{}/{}", s.source_id, s.codec_id, s.distortion_level));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::validation(file, None, missing_message(&missing)));
    }

    let columns = columns.into_iter().map(|(k, v)| (k, v.into_iter().map(Option::unwrap).collect())).collect();
    MetricScoreTable::new(design, columns)
}

pub fn load_jnd_scores(path: &Path, design: &ExperimentDesign) -> Result<JndTable> {
    read_jnd_scores(open(path)?, design, &path.display().to_string())
}

/// Reads externally supplied JND values (`source_id,codec_id,distortion_level,jnd`).
pub fn read_jnd_scores<R: Read>(rdr: R, design: &ExperimentDesign, file: &str) -> Result<JndTable> {
    let items = design.compressed_stimuli();
    let position: HashMap<StimulusIdx, usize> = items.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let mut values = vec![None; items.len()];
    for (row, r) in deserialize_rows::<_, RawJnd>(rdr, file)? {
        let stim = design
            .find_stimulus(&r.source_id, &r.codec_id, r.distortion_level)
            .filter(|&s| !design.stimulus(s).is_reference())
            .ok_or_else(|| {
                Error::validation(
                    file,
                    Some(row),
                    format!("unknown stimulus {}/{}/{}", r.source_id, r.codec_id, r.distortion_level),
                )
            })?;
        let cell = &mut values[position[&stim]];
        if cell.is_some() {
            return Err(Error::validation(file, Some(row), "duplicate jnd value"));
        }
        *cell = Some(r.jnd);
    }
    let missing: Vec<String> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_none())
        .map(|(p, _)| {
            let s = design.stimulus(items[p]);
            format!("{}/{}/{}", s.source_id, s.codec_id, s.distortion_level)
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(file, None, missing_message(&missing)));
    }
    JndTable::new(design, values.into_iter().map(Option::unwrap).collect())
}

fn missing_message(missing: &[String]) -> String {
    let shown = missing.iter().take(MAX_LISTED).cloned().collect::<Vec<_>>().join(", ");
    if missing.len() > MAX_LISTED {
        format!("{} missing cells: {shown}, ...", missing.len())
    } else {
        format!("{} missing cells: {shown}", missing.len())
    }
}
