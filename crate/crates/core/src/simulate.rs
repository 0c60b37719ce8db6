//! Synthetic triplet studies: design generation and seeded observers
//! answering from a known ground-truth [`ScaleModel`].

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    BatchRecord, Choice, ExperimentDesign, JndTable, MetricScoreTable, Mode, QuestionIdx, QuestionKind, QuestionRow,
    Response, Stimulus, StimulusRow, MAX_LEVEL,
};
use crate::error::{Error, Result};
use crate::scale::ScaleModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObserverKind {
    Thurstonian,
    Spammer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverProfile {
    pub kind: ObserverKind,
    /// Probability of answering "not sure" before looking at the stimuli.
    pub notsure_rate: f64,
    pub seed: u64,
}

impl ObserverProfile {
    pub fn thurstonian(notsure_rate: f64, seed: u64) -> Self {
        ObserverProfile { kind: ObserverKind::Thurstonian, notsure_rate, seed }
    }

    pub fn spammer(notsure_rate: f64, seed: u64) -> Self {
        ObserverProfile { kind: ObserverKind::Spammer, notsure_rate, seed }
    }

    /// One answer given the probability that a reliable observer says Left.
    pub fn answer(&self, p_left: f64, rng: &mut impl Rng) -> Choice {
        if self.notsure_rate > 0.0 && rng.random::<f64>() < self.notsure_rate {
            return Choice::NotSure;
        }
        let p = match self.kind {
            ObserverKind::Thurstonian => p_left,
            ObserverKind::Spammer => 0.5,
        };
        if rng.random::<f64>() < p {
            Choice::Left
        } else {
            Choice::Right
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyDesignSpec {
    pub sources: Vec<String>,
    pub codecs: Vec<String>,
    /// Codecs that get same-codec triplets; `None` means all of them.
    pub same_codec_codecs: Option<Vec<String>>,
    /// Bitrate of level 1, 2, ... (strictly decreasing).
    pub ladder: Vec<f64>,
    pub btc_levels: Vec<u8>,
    pub ptc_levels: Vec<u8>,
    pub btc_responses_per_triplet: usize,
    pub ptc_responses_per_triplet: usize,
    /// Cross-codec pairs as a fraction of same-codec pairs, per source.
    pub cross_codec_fraction: f64,
    pub traps_per_batch: usize,
    pub btc_batch_size: usize,
    pub ptc_batch_size: usize,
    pub reference_label: String,
    pub seed: u64,
}

/// 0.3 to 1.65 bpp in 0.15 steps; level 1 has the highest bitrate.
pub fn default_ladder() -> Vec<f64> {
    (0..MAX_LEVEL).map(|i| ((165 - 15 * i as i32) as f64) / 100.0).collect()
}

impl Default for StudyDesignSpec {
    fn default() -> Self {
        StudyDesignSpec {
            sources: (1..=5).map(|i| format!("src{i:02}")).collect(),
            codecs: ["avif", "jpeg", "jpeg2000", "jpeg_ai", "jpegxl", "vvc"].map(String::from).to_vec(),
            same_codec_codecs: Some(vec!["jpeg_ai".to_string()]),
            ladder: default_ladder(),
            btc_levels: (1..=10).collect(),
            ptc_levels: vec![2, 4, 6, 8, 10],
            btc_responses_per_triplet: 120,
            ptc_responses_per_triplet: 49,
            cross_codec_fraction: 0.2,
            traps_per_batch: 10,
            btc_batch_size: 132,
            ptc_batch_size: 90,
            reference_label: "ref".to_string(),
            seed: 0,
        }
    }
}

impl StudyDesignSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("study design: {m}")));
        if self.sources.is_empty() || self.codecs.is_empty() {
            return bad("sources and codecs must be non-empty");
        }
        if self.ladder.windows(2).any(|w| w[1] >= w[0]) || self.ladder.iter().any(|r| !(*r >= 0.0)) {
            return bad("ladder bitrates must be non-negative and strictly decreasing");
        }
        for &l in self.btc_levels.iter().chain(&self.ptc_levels) {
            if l == 0 || l > MAX_LEVEL || l as usize > self.ladder.len() {
                return bad(&format!("level {l} outside the ladder"));
            }
        }
        if self.btc_responses_per_triplet == 0 && self.ptc_responses_per_triplet == 0 {
            return bad("responses per triplet must be positive");
        }
        if !(0.0..=1.0).contains(&self.cross_codec_fraction) {
            return bad("cross-codec fraction must lie in [0, 1]");
        }
        for (mode, size, levels) in
            [(Mode::Btc, self.btc_batch_size, &self.btc_levels), (Mode::Ptc, self.ptc_batch_size, &self.ptc_levels)]
        {
            if levels.is_empty() {
                continue;
            }
            if size == 0 || size % 2 == 1 {
                return bad(&format!("{mode} batch size must be positive and even"));
            }
            if size < self.traps_per_batch {
                return bad(&format!("{mode} batch size {size} is smaller than {} traps", self.traps_per_batch));
            }
        }
        if self.traps_per_batch > 0 && !self.btc_levels.contains(&MAX_LEVEL) && !self.ptc_levels.contains(&MAX_LEVEL) {
            return bad("traps need level 10 in a level set");
        }
        let same = self.same_codecs();
        if same.iter().any(|c| !self.codecs.contains(c)) {
            return bad("same_codec_codecs must be a subset of codecs");
        }
        if self.cross_codec_fraction > 0.0 && self.codecs.len() < 2 {
            return bad("cross-codec triplets need at least two codecs");
        }
        Ok(())
    }

    fn same_codecs(&self) -> Vec<String> {
        self.same_codec_codecs.clone().unwrap_or_else(|| self.codecs.clone())
    }

    fn levels(&self, mode: Mode) -> &[u8] {
        match mode {
            Mode::Btc => &self.btc_levels,
            Mode::Ptc => &self.ptc_levels,
        }
    }

    fn batch_size(&self, mode: Mode) -> usize {
        match mode {
            Mode::Btc => self.btc_batch_size,
            Mode::Ptc => self.ptc_batch_size,
        }
    }

    pub fn responses_per_triplet(&self, mode: Mode) -> usize {
        match mode {
            Mode::Btc => self.btc_responses_per_triplet,
            Mode::Ptc => self.ptc_responses_per_triplet,
        }
    }

    pub fn bitrate(&self, level: u8) -> f64 {
        self.ladder[level as usize - 1]
    }
}

/// A fixed question set answered as a whole by one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTemplate {
    pub template_id: String,
    pub mode: Mode,
    pub questions: Vec<QuestionIdx>,
}

#[derive(Debug, Clone)]
pub struct SimulatedStudy {
    pub spec: StudyDesignSpec,
    pub design: ExperimentDesign,
    pub templates: Vec<BatchTemplate>,
}

/// (codec, level) with level 0 for the reference.
type Side = (String, u8);

struct PairSpec {
    source: String,
    kind: QuestionKind,
    a: Side,
    b: Side,
}

fn mode_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Enumerates same-codec pairs over {reference} ∪ levels for every codec in
/// the same-codec set, adds cross-codec pairs, deals mirror pairs into
/// batches and appends traps.
pub fn generate_design(spec: &StudyDesignSpec) -> Result<SimulatedStudy> {
    spec.validate()?;
    let same = spec.same_codecs();

    let mut stimuli = Vec::new();
    let mut all_levels: BTreeSet<u8> = spec.btc_levels.iter().copied().collect();
    all_levels.extend(spec.ptc_levels.iter().copied());
    for source in &spec.sources {
        stimuli.push(Stimulus::reference(source.clone(), spec.reference_label.clone()));
        for codec in &spec.codecs {
            for &level in &all_levels {
                stimuli.push(Stimulus::compressed(source.clone(), codec.clone(), level, spec.bitrate(level)));
            }
        }
    }

    let mut question_rows: Vec<QuestionRow> = Vec::new();
    let mut template_members: Vec<(String, Mode, Vec<String>)> = Vec::new();

    for (mode_index, mode) in [Mode::Btc, Mode::Ptc].into_iter().enumerate() {
        let levels = spec.levels(mode);
        if levels.is_empty() || spec.responses_per_triplet(mode) == 0 {
            continue;
        }
        let mut rng = mode_rng(spec.seed, mode_index as u64);
        let mut pairs: Vec<PairSpec> = Vec::new();
        for source in &spec.sources {
            let mut nodes: Vec<u8> = vec![0];
            nodes.extend(levels.iter().copied());
            let mut same_count = 0;
            for codec in &same {
                for i in 0..nodes.len() {
                    for j in i + 1..nodes.len() {
                        pairs.push(PairSpec {
                            source: source.clone(),
                            kind: QuestionKind::SameCodec,
                            a: (codec.clone(), nodes[i]),
                            b: (codec.clone(), nodes[j]),
                        });
                        same_count += 1;
                    }
                }
            }
            let wanted = (spec.cross_codec_fraction * same_count as f64).round() as usize;
            let mut chosen: BTreeSet<(Side, Side)> = BTreeSet::new();
            let mut attempts = 0;
            while chosen.len() < wanted {
                attempts += 1;
                if attempts > 1000 * wanted.max(1) {
                    return Err(Error::Config(format!(
                        "cannot draw {wanted} distinct cross-codec pairs for source {source}"
                    )));
                }
                let a_codec = &same[rng.random_range(0..same.len())];
                let others: Vec<&String> = spec.codecs.iter().filter(|c| *c != a_codec).collect();
                let b_codec = others[rng.random_range(0..others.len())];
                let ia = rng.random_range(0..levels.len());
                let ib = (ia as i64 + rng.random_range(-1i64..=1)).clamp(0, levels.len() as i64 - 1) as usize;
                let a = (a_codec.clone(), levels[ia]);
                let b = (b_codec.clone(), levels[ib]);
                let key = if a <= b { (a, b) } else { (b, a) };
                chosen.insert(key);
            }
            for (a, b) in chosen {
                pairs.push(PairSpec { source: source.clone(), kind: QuestionKind::CrossCodec, a, b });
            }
        }

        pairs.shuffle(&mut rng);
        let pairs_per_batch = spec.batch_size(mode) / 2;
        let prefix = mode.as_str().to_ascii_lowercase();
        let mut counter = 0usize;
        let mut push_pair = |rows: &mut Vec<QuestionRow>, members: &mut Vec<String>, p: &PairSpec, mirrored: bool| {
            let id_a = format!("{prefix}-{counter:05}");
            let id_b = format!("{prefix}-{:05}", counter + 1);
            counter += 2;
            let mk = |id: &str, l: &Side, r: &Side, mirror: Option<&str>| QuestionRow {
                row: 0,
                question_id: id.to_string(),
                mode,
                kind: p.kind,
                source_id: p.source.clone(),
                left_codec: l.0.clone(),
                left_level: l.1,
                right_codec: r.0.clone(),
                right_level: r.1,
                mirror_of: mirror.map(String::from),
            };
            rows.push(mk(&id_a, &p.a, &p.b, mirrored.then_some(id_b.as_str())));
            members.push(id_a.clone());
            if mirrored {
                rows.push(mk(&id_b, &p.b, &p.a, Some(&id_a)));
                members.push(id_b);
            }
        };

        for (b, chunk) in pairs.chunks(pairs_per_batch).enumerate() {
            let template_id = format!("{prefix}{:02}", b + 1);
            let mut members = Vec::new();
            for p in chunk {
                push_pair(&mut question_rows, &mut members, p, true);
            }
            let batch_sources: Vec<String> = {
                let mut s: Vec<String> = chunk.iter().map(|p| p.source.clone()).collect();
                s.sort();
                s.dedup();
                s
            };
            let mut remaining = spec.traps_per_batch;
            while remaining > 0 {
                let source = batch_sources[rng.random_range(0..batch_sources.len())].clone();
                let codec = same[rng.random_range(0..same.len())].clone();
                let trap = PairSpec {
                    source,
                    kind: QuestionKind::Trap,
                    a: (spec.reference_label.clone(), 0),
                    b: (codec, MAX_LEVEL),
                };
                let mirrored = remaining >= 2;
                push_pair(&mut question_rows, &mut members, &trap, mirrored);
                remaining -= if mirrored { 2 } else { 1 };
            }
            template_members.push((template_id, mode, members));
        }
    }

    for (i, row) in question_rows.iter_mut().enumerate() {
        row.row = i + 1;
    }
    let stimulus_rows =
        stimuli.into_iter().enumerate().map(|(i, stimulus)| StimulusRow { row: i + 1, stimulus }).collect();
    let design =
        ExperimentDesign::from_rows(stimulus_rows, question_rows, "<generated stimuli>", "<generated questions>")?;
    let templates = template_members
        .into_iter()
        .map(|(template_id, mode, ids)| BatchTemplate {
            template_id,
            mode,
            questions: ids.iter().map(|id| design.question_index(id).unwrap()).collect(),
        })
        .collect();
    Ok(SimulatedStudy { spec: spec.clone(), design, templates })
}

/// Answers every template `responses_per_triplet` times. Batch instance `i`
/// (counted over templates in order) is answered by `observers[i % len]`
/// with its own RNG stream. Output is sorted by batch id.
pub fn simulate(
    study: &SimulatedStudy,
    truth: &ScaleModel,
    observers: &[ObserverProfile],
    seed: u64,
) -> Result<Vec<BatchRecord>> {
    if observers.is_empty() {
        return Err(Error::Config("at least one observer profile is required".into()));
    }
    let design = &study.design;
    let p_left: Vec<f64> =
        (0..design.questions().len()).map(|q| truth.left_probability(design, q)).collect::<Result<_>>()?;

    let mut instances = Vec::new();
    for template in &study.templates {
        for k in 0..study.spec.responses_per_triplet(template.mode) {
            instances.push((template, k));
        }
    }

    let mut batches: Vec<BatchRecord> = instances
        .par_iter()
        .enumerate()
        .map(|(index, (template, k))| {
            let observer = &observers[index % observers.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ observer.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            rng.set_stream(index as u64);
            let mut order = template.questions.clone();
            order.shuffle(&mut rng);
            let responses = order
                .into_iter()
                .map(|q| Response { question: q, choice: observer.answer(p_left[q], &mut rng) })
                .collect();
            BatchRecord {
                batch_id: format!("{}-{k:03}", template.template_id),
                worker_id: format!("w{index:05}"),
                mode: template.mode,
                responses,
            }
        })
        .collect();
    batches.sort_by(|a, b| a.batch_id.cmp(&b.batch_id));
    Ok(batches)
}

/// Ground-truth plain JND of every compressed stimulus.
pub fn truth_jnd(design: &ExperimentDesign, truth: &ScaleModel) -> Result<JndTable> {
    JndTable::from_fn(design, |i| truth.perceived(design, i, Mode::Ptc))
}

/// Two toy metrics for closed-loop runs: the bitrate itself and the true
/// JND plus Gaussian noise of standard deviation `noise`.
pub fn synthetic_metric_scores(
    design: &ExperimentDesign,
    truth: &ScaleModel,
    noise: f64,
    seed: u64,
) -> Result<MetricScoreTable> {
    let jnd = truth_jnd(design, truth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut columns = BTreeMap::new();
    columns.insert("bitrate".to_string(), jnd.items().iter().map(|&i| design.stimulus(i).bitrate.unwrap()).collect());
    columns.insert("noisy_truth".to_string(), jnd.values().iter().map(|v| v + normal.sample(&mut rng)).collect());
    MetricScoreTable::new(design, columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ladder_matches_bitrate_range() {
        let l = default_ladder();
        assert_eq!(l.len(), 10);
        assert!((l[0] - 1.65).abs() < 1e-12 && (l[9] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn batch_smaller_than_traps_is_rejected() {
        let spec = StudyDesignSpec { ptc_batch_size: 8, ..Default::default() };
        assert!(generate_design(&spec).is_err());
    }

    #[test]
    fn odd_batch_size_is_rejected() {
        let spec = StudyDesignSpec { btc_batch_size: 131, ..Default::default() };
        assert!(generate_design(&spec).is_err());
    }

    #[test]
    fn spammer_ignores_the_stimuli() {
        let obs = ObserverProfile::spammer(0.0, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let left = (0..20_000).filter(|_| obs.answer(1.0, &mut rng) == Choice::Left).count();
        assert!((left as f64 / 20_000.0 - 0.5).abs() < 0.02);
    }
}
