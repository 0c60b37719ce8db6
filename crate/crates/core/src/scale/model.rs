use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::observer::{choice_probability, neg_log_cdf};
use crate::dataset::{Choice, ExperimentDesign, Mode, QuestionIdx, StimulusIdx};
use crate::error::{Error, Result};

/// Plain distortion-rate curve `d(r) = alpha * exp(-beta * r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecCurve {
    pub alpha: f64,
    pub beta: f64,
}

impl CodecCurve {
    pub fn jnd(&self, bitrate: f64) -> f64 {
        self.alpha * (-self.beta * bitrate).exp()
    }
}

/// Quadratic boosting transfer `t(d) = gamma1 * d + gamma2 * d^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boosting {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Boosting {
    pub const IDENTITY: Boosting = Boosting { gamma1: 1.0, gamma2: 0.0 };

    pub fn apply(&self, d: f64) -> f64 {
        self.gamma1 * d + self.gamma2 * d * d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scope", rename_all = "snake_case")]
pub enum BoostingTransfer {
    Shared(Boosting),
    PerCodec { codecs: BTreeMap<String, Boosting> },
}

/// Optimizer bookkeeping for one source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub nll: f64,
    pub responses: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    pub starts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub codecs: BTreeMap<String, CodecCurve>,
    pub boosting: BoostingTransfer,
    #[serde(default)]
    pub stats: FitStats,
}

impl SourceModel {
    pub fn curve(&self, codec: &str) -> Option<&CodecCurve> {
        self.codecs.get(codec)
    }

    pub fn boosting_for(&self, codec: &str) -> Option<Boosting> {
        match &self.boosting {
            BoostingTransfer::Shared(b) => Some(*b),
            BoostingTransfer::PerCodec { codecs } => codecs.get(codec).copied(),
        }
    }
}

/// Fitted JND scales, one independent model per source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleModel {
    pub jnd_unit_z: f64,
    pub sources: BTreeMap<String, SourceModel>,
}

impl ScaleModel {
    fn source(&self, source_id: &str) -> Result<&SourceModel> {
        self.sources.get(source_id).ok_or_else(|| Error::UnknownSource(source_id.to_string()))
    }

    fn curve(&self, source_id: &str, codec: &str) -> Result<(&SourceModel, &CodecCurve)> {
        let src = self.source(source_id)?;
        let curve = src
            .curve(codec)
            .ok_or_else(|| Error::UnknownCodec { source_id: source_id.to_string(), codec: codec.to_string() })?;
        Ok((src, curve))
    }

    /// Plain perceived distortion in JND at `bitrate`.
    pub fn jnd_at(&self, source_id: &str, codec: &str, bitrate: f64) -> Result<f64> {
        if !(bitrate >= 0.0) {
            return Err(Error::Domain(format!("bitrate {bitrate} must be non-negative")));
        }
        Ok(self.curve(source_id, codec)?.1.jnd(bitrate))
    }

    /// Boosted perceived distortion `t(d(r))`.
    pub fn boosted_jnd_at(&self, source_id: &str, codec: &str, bitrate: f64) -> Result<f64> {
        let d = self.jnd_at(source_id, codec, bitrate)?;
        let (src, _) = self.curve(source_id, codec)?;
        Ok(src.boosting_for(codec).unwrap_or(Boosting::IDENTITY).apply(d))
    }

    /// Perceived distortion of a stimulus as seen in `mode`; the reference is 0.
    pub fn perceived(&self, design: &ExperimentDesign, stimulus: StimulusIdx, mode: Mode) -> Result<f64> {
        let s = design.stimulus(stimulus);
        let Some(bitrate) = s.bitrate else { return Ok(0.0) };
        match mode {
            Mode::Ptc => self.jnd_at(&s.source_id, &s.codec_id, bitrate),
            Mode::Btc => self.boosted_jnd_at(&s.source_id, &s.codec_id, bitrate),
        }
    }

    /// Perceived distortion of the left side minus the right side.
    fn question_delta(&self, design: &ExperimentDesign, question: QuestionIdx) -> Result<f64> {
        let q = design.question(question);
        let l = self.perceived(design, q.left, q.mode)?;
        let r = self.perceived(design, q.right, q.mode)?;
        Ok(l - r)
    }

    /// Probability of answering `Left` on a question.
    pub fn left_probability(&self, design: &ExperimentDesign, question: QuestionIdx) -> Result<f64> {
        Ok(choice_probability(self.question_delta(design, question)?, self.jnd_unit_z))
    }

    /// Log-likelihood of one answer, with "not sure" split evenly. Uses the
    /// same floored tails as the fitting objective.
    pub fn choice_log_likelihood(
        &self,
        design: &ExperimentDesign,
        question: QuestionIdx,
        choice: Choice,
    ) -> Result<f64> {
        let x = self.jnd_unit_z * self.question_delta(design, question)?;
        let ll = -neg_log_cdf(x).0;
        let lr = -neg_log_cdf(-x).0;
        Ok(match choice {
            Choice::Left => ll,
            Choice::Right => lr,
            Choice::NotSure => 0.5 * (ll + lr),
        })
    }
}
