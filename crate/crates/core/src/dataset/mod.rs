//! Domain model for triplet-comparison studies: stimuli, questions, worker
//! responses and externally computed metric scores.
//!
//! Everything here is immutable once constructed. An [`ExperimentDesign`] is
//! only ever produced through validation, so downstream modules can index
//! into it without re-checking referential integrity.

mod io;
mod scores;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_design, load_responses, read_design, read_responses, write_design, write_responses, DesignFiles};
pub use scores::{
    load_jnd_scores, load_metric_scores, read_jnd_scores, read_metric_scores, JndTable, MetricScoreTable,
};

/// Highest distortion level on a ladder; level 0 is the pristine reference.
pub const MAX_LEVEL: u8 = 10;

/// Index of a stimulus inside [`ExperimentDesign::stimuli`].
pub type StimulusIdx = usize;
/// Index of a question inside [`ExperimentDesign::questions`].
pub type QuestionIdx = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "BTC")]
    Btc,
    #[serde(rename = "PTC")]
    Ptc,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BTC" => Some(Mode::Btc),
            "PTC" => Some(Mode::Ptc),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Btc => "BTC",
            Mode::Ptc => "PTC",
        }
    }

    pub fn is_boosted(self) -> bool {
        self == Mode::Btc
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    SameCodec,
    CrossCodec,
    Trap,
}

impl QuestionKind {
    pub fn parse(s: &str) -> Option<QuestionKind> {
        match s.trim().to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "same_codec" | "samecodec" | "same" => Some(QuestionKind::SameCodec),
            "cross_codec" | "crosscodec" | "cross" => Some(QuestionKind::CrossCodec),
            "trap" => Some(QuestionKind::Trap),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionKind::SameCodec => "same_codec",
            QuestionKind::CrossCodec => "cross_codec",
            QuestionKind::Trap => "trap",
        }
    }
}

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A worker's answer: which side looked more distorted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    Left,
    Right,
    NotSure,
}

impl Choice {
    pub fn parse(s: &str) -> Option<Choice> {
        match s.trim() {
            "L" | "l" => Some(Choice::Left),
            "R" | "r" => Some(Choice::Right),
            "N" | "n" => Some(Choice::NotSure),
            _ => None,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Choice::Left => "L",
            Choice::Right => "R",
            Choice::NotSure => "N",
        }
    }

    /// The same answer expressed for the left/right-swapped question.
    pub fn mirrored(self) -> Choice {
        match self {
            Choice::Left => Choice::Right,
            Choice::Right => Choice::Left,
            Choice::NotSure => Choice::NotSure,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub source_id: String,
    pub codec_id: String,
    /// Bits per pixel; `None` for the reference.
    pub bitrate: Option<f64>,
    pub distortion_level: u8,
}

impl Stimulus {
    pub fn reference(source_id: impl Into<String>, codec_label: impl Into<String>) -> Self {
        Stimulus { source_id: source_id.into(), codec_id: codec_label.into(), bitrate: None, distortion_level: 0 }
    }

    pub fn compressed(source_id: impl Into<String>, codec_id: impl Into<String>, level: u8, bitrate: f64) -> Self {
        Stimulus {
            source_id: source_id.into(),
            codec_id: codec_id.into(),
            bitrate: Some(bitrate),
            distortion_level: level,
        }
    }

    pub fn is_reference(&self) -> bool {
        self.distortion_level == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletQuestion {
    pub question_id: String,
    pub mode: Mode,
    pub kind: QuestionKind,
    pub left: StimulusIdx,
    pub reference: StimulusIdx,
    pub right: StimulusIdx,
    pub mirror_of: Option<String>,
}

/// One worker's answer to one question.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Response {
    pub question: QuestionIdx,
    pub choice: Choice,
}

/// A worker's completed batch of questions.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchRecord {
    pub batch_id: String,
    pub worker_id: String,
    pub mode: Mode,
    pub responses: Vec<Response>,
}

/// Unvalidated stimulus row, `row` being the 1-based data row it came from.
#[derive(Debug, Clone)]
pub struct StimulusRow {
    pub row: usize,
    pub stimulus: Stimulus,
}

/// Unvalidated question row. Sides are addressed by (codec, level); level 0
/// always resolves to the source's reference regardless of the codec label.
#[derive(Debug, Clone)]
pub struct QuestionRow {
    pub row: usize,
    pub question_id: String,
    pub mode: Mode,
    pub kind: QuestionKind,
    pub source_id: String,
    pub left_codec: String,
    pub left_level: u8,
    pub right_codec: String,
    pub right_level: u8,
    pub mirror_of: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DesignSummary {
    pub stimuli: usize,
    pub sources: usize,
    pub questions: usize,
    /// Question counts keyed by "MODE/kind".
    pub by_mode_kind: BTreeMap<String, usize>,
}

/// Validated stimuli and questions.
#[derive(Debug, Clone)]
pub struct ExperimentDesign {
    stimuli: Vec<Stimulus>,
    questions: Vec<TripletQuestion>,
    mirrors: Vec<Option<QuestionIdx>>,
    stimulus_lookup: HashMap<(String, String, u8), StimulusIdx>,
    references: HashMap<String, StimulusIdx>,
    question_lookup: HashMap<String, QuestionIdx>,
}

impl PartialEq for ExperimentDesign {
    fn eq(&self, other: &Self) -> bool {
        self.stimuli == other.stimuli && self.questions == other.questions
    }
}

impl ExperimentDesign {
    /// Validates raw rows and builds a design. Stimuli and questions are
    /// stored in canonical order, so row order in the input does not matter.
    pub fn from_rows(
        stimulus_rows: Vec<StimulusRow>,
        question_rows: Vec<QuestionRow>,
        stimuli_file: &str,
        questions_file: &str,
    ) -> Result<Self> {
        let stimuli = validate_stimuli(stimulus_rows, stimuli_file)?;

        let mut stimulus_lookup = HashMap::new();
        let mut references = HashMap::new();
        for (idx, s) in stimuli.iter().enumerate() {
            if s.is_reference() {
                references.insert(s.source_id.clone(), idx);
            } else {
                stimulus_lookup.insert((s.source_id.clone(), s.codec_id.clone(), s.distortion_level), idx);
            }
        }

        if question_rows.is_empty() {
            return Err(Error::validation(questions_file, None, "no questions"));
        }

        let mut question_rows = question_rows;
        question_rows.sort_by(|a, b| a.question_id.cmp(&b.question_id));
        for pair in question_rows.windows(2) {
            if pair[0].question_id == pair[1].question_id {
                return Err(Error::validation(
                    questions_file,
                    Some(pair[1].row.max(pair[0].row)),
                    format!("duplicate question id {}", pair[1].question_id),
                ));
            }
        }

        let resolve = |row: &QuestionRow, codec: &str, level: u8| -> Result<StimulusIdx> {
            if level == 0 {
                references.get(&row.source_id).copied().ok_or_else(|| {
                    Error::validation(
                        questions_file,
                        Some(row.row),
                        format!(
                            "question {} references missing reference stimulus for source {}",
                            row.question_id, row.source_id
                        ),
                    )
                })
            } else {
                stimulus_lookup.get(&(row.source_id.clone(), codec.to_string(), level)).copied().ok_or_else(|| {
                    Error::validation(
                        questions_file,
                        Some(row.row),
                        format!(
                            "question {} references unknown stimulus {}/{}/{}",
                            row.question_id, row.source_id, codec, level
                        ),
                    )
                })
            }
        };

        let mut questions = Vec::with_capacity(question_rows.len());
        for row in &question_rows {
            let left = resolve(row, &row.left_codec, row.left_level)?;
            let right = resolve(row, &row.right_codec, row.right_level)?;
            let reference = resolve(row, "", 0)?;
            let q = TripletQuestion {
                question_id: row.question_id.clone(),
                mode: row.mode,
                kind: row.kind,
                left,
                reference,
                right,
                mirror_of: row.mirror_of.clone().filter(|m| !m.is_empty()),
            };
            check_question_kind(&q, &stimuli).map_err(|msg| {
                Error::validation(questions_file, Some(row.row), format!("question {}: {msg}", q.question_id))
            })?;
            questions.push(q);
        }

        let question_lookup: HashMap<String, QuestionIdx> =
            questions.iter().enumerate().map(|(i, q)| (q.question_id.clone(), i)).collect();

        let mut mirrors = vec![None; questions.len()];
        for (idx, q) in questions.iter().enumerate() {
            let Some(target_id) = &q.mirror_of else { continue };
            let row = Some(question_rows[idx].row);
            let &target = question_lookup.get(target_id).ok_or_else(|| {
                Error::validation(
                    questions_file,
                    row,
                    format!("question {} mirrors unknown question {target_id}", q.question_id),
                )
            })?;
            let t = &questions[target];
            if target == idx || t.left != q.right || t.right != q.left || t.mode != q.mode || t.kind != q.kind {
                return Err(Error::validation(
                    questions_file,
                    row,
                    format!("question {} and its mirror {target_id} are not a left/right-swapped pair", q.question_id),
                ));
            }
            if let Some(back) = &t.mirror_of {
                if back != &q.question_id {
                    return Err(Error::validation(
                        questions_file,
                        row,
                        format!("mirror link {} -> {target_id} is not reciprocal", q.question_id),
                    ));
                }
            }
            mirrors[idx] = Some(target);
            mirrors[target] = Some(idx);
        }

        Ok(ExperimentDesign { stimuli, questions, mirrors, stimulus_lookup, references, question_lookup })
    }

    pub fn stimuli(&self) -> &[Stimulus] {
        &self.stimuli
    }

    pub fn stimulus(&self, idx: StimulusIdx) -> &Stimulus {
        &self.stimuli[idx]
    }

    pub fn questions(&self) -> &[TripletQuestion] {
        &self.questions
    }

    pub fn question(&self, idx: QuestionIdx) -> &TripletQuestion {
        &self.questions[idx]
    }

    pub fn question_index(&self, question_id: &str) -> Option<QuestionIdx> {
        self.question_lookup.get(question_id).copied()
    }

    /// Explicitly linked mirror twin of a question, if any.
    pub fn mirror(&self, idx: QuestionIdx) -> Option<QuestionIdx> {
        self.mirrors[idx]
    }

    pub fn has_mirror_links(&self) -> bool {
        self.mirrors.iter().any(Option::is_some)
    }

    pub fn find_stimulus(&self, source_id: &str, codec_id: &str, level: u8) -> Option<StimulusIdx> {
        if level == 0 {
            return self.reference_of(source_id);
        }
        self.stimulus_lookup.get(&(source_id.to_string(), codec_id.to_string(), level)).copied()
    }

    pub fn reference_of(&self, source_id: &str) -> Option<StimulusIdx> {
        self.references.get(source_id).copied()
    }

    pub fn source_of(&self, q: &TripletQuestion) -> &str {
        &self.stimuli[q.reference].source_id
    }

    /// Distinct source ids in sorted order.
    pub fn sources(&self) -> Vec<String> {
        let mut v: Vec<String> = self.stimuli.iter().map(|s| s.source_id.clone()).collect();
        v.dedup();
        v
    }

    /// Distinct codec ids of compressed stimuli, sorted.
    pub fn codecs(&self) -> Vec<String> {
        let mut v: Vec<String> =
            self.stimuli.iter().filter(|s| !s.is_reference()).map(|s| s.codec_id.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Indices of all non-reference stimuli, in canonical order.
    pub fn compressed_stimuli(&self) -> Vec<StimulusIdx> {
        (0..self.stimuli.len()).filter(|&i| !self.stimuli[i].is_reference()).collect()
    }

    /// Bitrate range of the ladder of one (source, codec).
    pub fn ladder_range(&self, source_id: &str, codec_id: &str) -> Option<(f64, f64)> {
        let rates = self
            .stimuli
            .iter()
            .filter(|s| s.source_id == source_id && s.codec_id == codec_id)
            .filter_map(|s| s.bitrate);
        rates.fold(None, |acc, r| match acc {
            None => Some((r, r)),
            Some((lo, hi)) => Some((lo.min(r), hi.max(r))),
        })
    }

    pub fn summary(&self) -> DesignSummary {
        let mut by_mode_kind = BTreeMap::new();
        for q in &self.questions {
            *by_mode_kind.entry(format!("{}/{}", q.mode, q.kind)).or_insert(0) += 1;
        }
        DesignSummary {
            stimuli: self.stimuli.len(),
            sources: self.references.len(),
            questions: self.questions.len(),
            by_mode_kind,
        }
    }

    /// Rows that reproduce this design when validated again.
    pub fn to_rows(&self) -> (Vec<StimulusRow>, Vec<QuestionRow>) {
        let stimuli =
            self.stimuli.iter().enumerate().map(|(i, s)| StimulusRow { row: i + 1, stimulus: s.clone() }).collect();
        let questions = self
            .questions
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let l = &self.stimuli[q.left];
                let r = &self.stimuli[q.right];
                QuestionRow {
                    row: i + 1,
                    question_id: q.question_id.clone(),
                    mode: q.mode,
                    kind: q.kind,
                    source_id: self.stimuli[q.reference].source_id.clone(),
                    left_codec: l.codec_id.clone(),
                    left_level: l.distortion_level,
                    right_codec: r.codec_id.clone(),
                    right_level: r.distortion_level,
                    mirror_of: q.mirror_of.clone(),
                }
            })
            .collect();
        (stimuli, questions)
    }
}

fn validate_stimuli(rows: Vec<StimulusRow>, file: &str) -> Result<Vec<Stimulus>> {
    let mut seen: HashMap<(String, String, u8), usize> = HashMap::new();
    let mut reference_rows: HashMap<String, usize> = HashMap::new();
    for StimulusRow { row: line, stimulus: s } in &rows {
        let row = Some(*line);
        if s.source_id.is_empty() {
            return Err(Error::validation(file, row, "empty source_id"));
        }
        if s.distortion_level > MAX_LEVEL {
            return Err(Error::validation(
                file,
                row,
                format!("distortion level {} outside 0..={MAX_LEVEL}", s.distortion_level),
            ));
        }
        match (s.is_reference(), s.bitrate) {
            (true, Some(_)) => {
                return Err(Error::validation(file, row, "reference stimulus (level 0) must not have a bitrate"))
            }
            (false, None) => return Err(Error::validation(file, row, "compressed stimulus is missing its bitrate")),
            (false, Some(b)) if !b.is_finite() || b < 0.0 => {
                return Err(Error::validation(file, row, format!("invalid bitrate {b}")))
            }
            _ => {}
        }
        if s.is_reference() {
            if let Some(prev) = reference_rows.insert(s.source_id.clone(), *line) {
                return Err(Error::validation(
                    file,
                    row,
                    format!("duplicate reference for source {} (first at row {prev})", s.source_id),
                ));
            }
        } else {
            if s.codec_id.is_empty() {
                return Err(Error::validation(file, row, "empty codec_id"));
            }
            let key = (s.source_id.clone(), s.codec_id.clone(), s.distortion_level);
            if let Some(prev) = seen.insert(key, *line) {
                return Err(Error::validation(
                    file,
                    row,
                    format!(
                        "duplicate stimulus {}/{}/{} (first at row {prev})",
                        s.source_id, s.codec_id, s.distortion_level
                    ),
                ));
            }
        }
    }

    let mut rows = rows;
    rows.sort_by(|a, b| {
        let (x, y) = (&a.stimulus, &b.stimulus);
        (&x.source_id, !x.is_reference(), &x.codec_id, x.distortion_level).cmp(&(
            &y.source_id,
            !y.is_reference(),
            &y.codec_id,
            y.distortion_level,
        ))
    });

    // Bitrate must fall strictly as the level rises within each ladder.
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0].stimulus, &pair[1].stimulus);
        if a.is_reference() || a.source_id != b.source_id || a.codec_id != b.codec_id {
            continue;
        }
        if b.bitrate.unwrap() >= a.bitrate.unwrap() {
            return Err(Error::validation(
                file,
                Some(pair[1].row),
                format!(
                    "malformed ladder for {}/{}: level {} has bitrate {} not below level {} ({})",
                    b.source_id,
                    b.codec_id,
                    b.distortion_level,
                    b.bitrate.unwrap(),
                    a.distortion_level,
                    a.bitrate.unwrap()
                ),
            ));
        }
    }

    Ok(rows.into_iter().map(|r| r.stimulus).collect())
}

fn check_question_kind(q: &TripletQuestion, stimuli: &[Stimulus]) -> std::result::Result<(), String> {
    let (l, r) = (&stimuli[q.left], &stimuli[q.right]);
    if q.left == q.right {
        return Err("left and right are the same stimulus".into());
    }
    match q.kind {
        // The reference is codec-neutral, so only compressed sides must agree.
        QuestionKind::SameCodec => {
            if !l.is_reference() && !r.is_reference() && l.codec_id != r.codec_id {
                return Err(format!("same_codec question compares {} with {}", l.codec_id, r.codec_id));
            }
        }
        QuestionKind::CrossCodec => {
            if l.is_reference() || r.is_reference() || l.codec_id == r.codec_id {
                return Err("cross_codec question must compare two compressed stimuli of different codecs".into());
            }
        }
        QuestionKind::Trap => {
            let ok = (l.is_reference() && r.distortion_level == MAX_LEVEL)
                || (r.is_reference() && l.distortion_level == MAX_LEVEL);
            if !ok {
                return Err(format!("trap must pair the reference with level {MAX_LEVEL}"));
            }
        }
    }
    Ok(())
}
