//! Batch screening: weighted accuracy and mirror consistency, Otsu
//! thresholding of their mean, and the outlier-exchange pass.

mod otsu;

use std::collections::{BTreeMap, HashMap, HashSet};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use otsu::{bin_of, otsu_threshold};

use crate::dataset::{BatchRecord, Choice, ExperimentDesign, Mode, QuestionIdx, QuestionKind, Stimulus};
use crate::error::{Error, Result};
use crate::scale::{fit, FitConfig, ResponseSet};

/// Partial credit for a mirror pair where exactly one answer is "not sure".
pub const PARTIAL_CONSISTENCY: f64 = 0.375;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// |Δ distortion level|, reference at level 0.
    #[default]
    LevelDifference,
    /// |Δ bitrate|; the reference sits one mean ladder step above the
    /// highest bitrate of the other side's ladder.
    BitrateDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScreeningConfig {
    pub otsu_bins: usize,
    pub exchange_enabled: bool,
    pub exchange_low_quantile: f64,
    pub exchange_sigma: f64,
    pub weighting: WeightScheme,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        ScreeningConfig {
            otsu_bins: 256,
            exchange_enabled: true,
            exchange_low_quantile: 0.25,
            exchange_sigma: 2.0,
            weighting: WeightScheme::LevelDifference,
        }
    }
}

impl ScreeningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.otsu_bins < 2 {
            return Err(Error::Config("otsu_bins must be at least 2".into()));
        }
        if !(self.exchange_low_quantile > 0.0 && self.exchange_low_quantile < 1.0) {
            return Err(Error::Config("exchange_low_quantile must lie in (0, 1)".into()));
        }
        if !(self.exchange_sigma > 0.0) {
            return Err(Error::Config("exchange_sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchLabel {
    Inlier,
    Screened,
    Outlier,
}

impl BatchLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BatchLabel::Inlier => "inlier",
            BatchLabel::Screened => "screened",
            BatchLabel::Outlier => "outlier",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchScreening {
    pub batch_id: String,
    pub mode: Mode,
    pub accuracy: f64,
    pub consistency: f64,
    pub combined: f64,
    pub label: BatchLabel,
    /// Mean per-response log-likelihood under the inlier consensus model,
    /// filled by the exchange pass.
    pub mean_log_likelihood: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub mode: Mode,
    pub threshold: f64,
    pub batches: Vec<BatchScreening>,
    pub screened: usize,
    pub relabeled_inlier: usize,
    pub relabeled_outlier: usize,
    pub exchange_applied: bool,
}

impl ScreeningReport {
    pub fn label_of(&self, batch_id: &str) -> Option<BatchLabel> {
        self.batches.iter().find(|b| b.batch_id == batch_id).map(|b| b.label)
    }

    pub fn inlier_ids(&self) -> HashSet<&str> {
        self.batches.iter().filter(|b| b.label == BatchLabel::Inlier).map(|b| b.batch_id.as_str()).collect()
    }

    pub fn count(&self, label: BatchLabel) -> usize {
        self.batches.iter().filter(|b| b.label == label).count()
    }
}

/// Per-(source, codec) ladder facts used by the bitrate weighting.
fn reference_bitrate(design: &ExperimentDesign, other: &Stimulus) -> f64 {
    let ladder: Vec<f64> = design
        .stimuli()
        .iter()
        .filter(|s| s.source_id == other.source_id && s.codec_id == other.codec_id)
        .filter_map(|s| s.bitrate)
        .collect();
    let hi = ladder.iter().copied().fold(f64::MIN, f64::max);
    let lo = ladder.iter().copied().fold(f64::MAX, f64::min);
    let step = if ladder.len() > 1 { (hi - lo) / (ladder.len() - 1) as f64 } else { hi.max(1.0) };
    hi + step
}

fn pair_weight(design: &ExperimentDesign, left: &Stimulus, right: &Stimulus, scheme: WeightScheme) -> f64 {
    match scheme {
        WeightScheme::LevelDifference => (left.distortion_level as f64 - right.distortion_level as f64).abs(),
        WeightScheme::BitrateDifference => {
            let rate = |s: &Stimulus, other: &Stimulus| s.bitrate.unwrap_or_else(|| reference_bitrate(design, other));
            (rate(left, right) - rate(right, left)).abs()
        }
    }
}

/// Weighted share of correct answers on same-codec and trap questions.
/// The more distorted side (higher level) is the correct pick; "not sure"
/// scores 0.5.
pub fn accuracy_score(batch: &BatchRecord, design: &ExperimentDesign, scheme: WeightScheme) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for r in &batch.responses {
        let q = design.question(r.question);
        if q.kind == QuestionKind::CrossCodec {
            continue;
        }
        let (l, rt) = (design.stimulus(q.left), design.stimulus(q.right));
        let w = pair_weight(design, l, rt, scheme);
        if w <= 0.0 {
            continue;
        }
        let left_is_worse = l.distortion_level > rt.distortion_level;
        let score = match r.choice {
            Choice::NotSure => 0.5,
            Choice::Left if left_is_worse => 1.0,
            Choice::Right if !left_is_worse => 1.0,
            _ => 0.0,
        };
        num += w * score;
        den += w;
    }
    if den == 0.0 {
        return Err(Error::UndefinedScore(format!("batch {} has no same-codec responses", batch.batch_id)));
    }
    Ok(num / den)
}

fn pair_consistency(a: Choice, b: Choice) -> f64 {
    match (a, b) {
        (Choice::NotSure, Choice::NotSure) => 1.0,
        (Choice::NotSure, _) | (_, Choice::NotSure) => PARTIAL_CONSISTENCY,
        _ if a == b.mirrored() => 1.0,
        _ => 0.0,
    }
}

/// Mirror pairs answered within a batch, each listed once as
/// `(question, twin)` with `question < twin`. Explicit links take
/// precedence; questions without a link are matched on
/// (mode, kind, swapped sides).
fn mirror_pairs(batch: &BatchRecord, design: &ExperimentDesign) -> Vec<(QuestionIdx, QuestionIdx)> {
    let mut present: Vec<QuestionIdx> = batch.responses.iter().map(|r| r.question).collect();
    present.sort_unstable();
    present.dedup();
    let in_batch: HashSet<QuestionIdx> = present.iter().copied().collect();

    let mut by_key: HashMap<(Mode, QuestionKind, usize, usize), Vec<QuestionIdx>> = HashMap::new();
    for &q in &present {
        if design.mirror(q).is_none() {
            let t = design.question(q);
            by_key.entry((t.mode, t.kind, t.left, t.right)).or_default().push(q);
        }
    }

    let mut used: HashSet<QuestionIdx> = HashSet::new();
    let mut pairs = Vec::new();
    for &q in &present {
        if used.contains(&q) {
            continue;
        }
        let twin = match design.mirror(q) {
            Some(m) => in_batch.contains(&m).then_some(m),
            None => {
                let t = design.question(q);
                by_key
                    .get(&(t.mode, t.kind, t.right, t.left))
                    .and_then(|c| c.iter().copied().find(|&m| m != q && !used.contains(&m)))
            }
        };
        if let Some(m) = twin {
            used.insert(q);
            used.insert(m);
            pairs.push((q.min(m), q.max(m)));
        }
    }
    pairs
}

/// Weighted agreement over mirror pairs: 1 for matching answers (including
/// two "not sure"), 0.375 when exactly one is "not sure", 0 otherwise.
pub fn consistency_score(batch: &BatchRecord, design: &ExperimentDesign, scheme: WeightScheme) -> Result<f64> {
    let mut answers: BTreeMap<QuestionIdx, Vec<Choice>> = BTreeMap::new();
    for r in &batch.responses {
        answers.entry(r.question).or_default().push(r.choice);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (q, m) in mirror_pairs(batch, design) {
        let t = design.question(q);
        let w = pair_weight(design, design.stimulus(t.left), design.stimulus(t.right), scheme);
        if w <= 0.0 {
            continue;
        }
        for (&a, &b) in answers[&q].iter().zip(&answers[&m]) {
            num += w * pair_consistency(a, b);
            den += w;
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedScore(format!("batch {} has no mirror pairs", batch.batch_id)));
    }
    Ok(num / den)
}

/// Scores a single-mode set of batches and labels those whose combined
/// score falls below the Otsu threshold as screened.
pub fn screen(batches: &[BatchRecord], design: &ExperimentDesign, config: &ScreeningConfig) -> Result<ScreeningReport> {
    config.validate()?;
    let mode = match batches.first() {
        Some(b) => b.mode,
        None => return Err(Error::UndefinedScore("no batches to screen".into())),
    };
    if let Some(b) = batches.iter().find(|b| b.mode != mode) {
        return Err(Error::Config(format!("screen expects one mode; batch {} is {}", b.batch_id, b.mode)));
    }

    let scores: Vec<(f64, f64)> = batches
        .par_iter()
        .map(|b| Ok((accuracy_score(b, design, config.weighting)?, consistency_score(b, design, config.weighting)?)))
        .collect::<Result<_>>()?;
    let combined: Vec<f64> = scores.iter().map(|(a, c)| 0.5 * (a + c)).collect();
    let threshold = otsu_threshold(&combined, config.otsu_bins)?;

    let entries: Vec<BatchScreening> = batches
        .iter()
        .zip(scores.iter().zip(&combined))
        .map(|(b, (&(accuracy, consistency), &combined))| BatchScreening {
            batch_id: b.batch_id.clone(),
            mode,
            accuracy,
            consistency,
            combined,
            label: if combined < threshold { BatchLabel::Screened } else { BatchLabel::Inlier },
            mean_log_likelihood: None,
        })
        .collect();
    let screened = entries.iter().filter(|e| e.label == BatchLabel::Screened).count();
    Ok(ScreeningReport {
        mode,
        threshold,
        batches: entries,
        screened,
        relabeled_inlier: 0,
        relabeled_outlier: 0,
        exchange_applied: false,
    })
}

/// Mean per-response log-likelihood of a batch's non-trap answers under a
/// model; `None` when no answer can be evaluated.
fn batch_mean_log_likelihood(
    batch: &BatchRecord,
    design: &ExperimentDesign,
    model: &crate::scale::ScaleModel,
) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in &batch.responses {
        if design.question(r.question).kind == QuestionKind::Trap {
            continue;
        }
        if let Ok(ll) = model.choice_log_likelihood(design, r.question, r.choice) {
            sum += ll;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Relabels batches by their fit to a consensus model estimated on the
/// inliers alone: screened batches above the configured low quantile of
/// inlier fits become inliers, inliers more than `exchange_sigma` standard
/// deviations below the inlier mean become outliers. One pass; a failed
/// consensus fit leaves the labels unchanged.
pub fn outlier_exchange(
    report: &ScreeningReport,
    batches: &[BatchRecord],
    design: &ExperimentDesign,
    config: &ScreeningConfig,
    fit_config: &FitConfig,
) -> Result<ScreeningReport> {
    config.validate()?;
    let mut out = report.clone();
    if !config.exchange_enabled {
        return Ok(out);
    }
    let by_id: HashMap<&str, &BatchRecord> = batches.iter().map(|b| (b.batch_id.as_str(), b)).collect();
    let inliers = report.inlier_ids();
    let inlier_batches: Vec<&BatchRecord> = inliers.iter().filter_map(|id| by_id.get(id).copied()).collect();

    let data = ResponseSet::from_batches(design, inlier_batches.iter().copied());
    let questions: usize = data.sources.iter().map(|s| s.tallies.len()).sum();
    if questions == 0 || (data.responses() as usize) < questions {
        warn!("{} outlier exchange skipped: too few inlier responses for a consensus fit", report.mode);
        return Ok(out);
    }
    let model = match fit(&data, fit_config) {
        Ok(m) => m,
        Err(e) => {
            warn!("{} outlier exchange skipped: consensus fit failed: {e}", report.mode);
            return Ok(out);
        }
    };

    let lls: Vec<Option<f64>> = out
        .batches
        .par_iter()
        .map(|e| by_id.get(e.batch_id.as_str()).and_then(|b| batch_mean_log_likelihood(b, design, &model)))
        .collect();
    let mut inlier_ll: Vec<f64> =
        out.batches.iter().zip(&lls).filter(|(e, _)| e.label == BatchLabel::Inlier).filter_map(|(_, ll)| *ll).collect();
    if inlier_ll.len() < 2 {
        warn!("{} outlier exchange skipped: fewer than two scored inliers", report.mode);
        return Ok(out);
    }
    inlier_ll.sort_by(f64::total_cmp);
    let low = crate::scale::quantile_sorted(&inlier_ll, config.exchange_low_quantile);
    let n = inlier_ll.len() as f64;
    let mean = inlier_ll.iter().sum::<f64>() / n;
    let sd = (inlier_ll.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let floor = mean - config.exchange_sigma * sd;

    for (e, ll) in out.batches.iter_mut().zip(lls) {
        e.mean_log_likelihood = ll;
        let Some(ll) = ll else { continue };
        match e.label {
            BatchLabel::Screened if ll > low => {
                e.label = BatchLabel::Inlier;
                out.relabeled_inlier += 1;
            }
            BatchLabel::Inlier if ll < floor => {
                e.label = BatchLabel::Outlier;
                out.relabeled_outlier += 1;
            }
            _ => {}
        }
    }
    out.exchange_applied = true;
    Ok(out)
}

/// Screens each mode separately and runs the exchange pass on each.
pub fn screen_all(
    batches: &[BatchRecord],
    design: &ExperimentDesign,
    config: &ScreeningConfig,
    fit_config: &FitConfig,
) -> Result<Vec<ScreeningReport>> {
    let mut reports = Vec::new();
    for mode in [Mode::Btc, Mode::Ptc] {
        let subset: Vec<BatchRecord> = batches.iter().filter(|b| b.mode == mode).cloned().collect();
        if subset.is_empty() {
            continue;
        }
        let report = screen(&subset, design, config)?;
        reports.push(outlier_exchange(&report, &subset, design, config, fit_config)?);
    }
    Ok(reports)
}
