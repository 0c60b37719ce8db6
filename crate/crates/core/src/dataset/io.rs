//! CSV ingestion and serialization for designs and responses.
//!
//! Files are UTF-8 with a header row. Lines starting with `#` are comments
//! (artifacts written by this crate carry a provenance comment on line 1).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::Deserialize;

use super::{BatchRecord, Choice, ExperimentDesign, Mode, QuestionKind, QuestionRow, Response, Stimulus, StimulusRow};
use crate::error::{Error, Result};

/// Paths of the design files.
#[derive(Debug, Clone)]
pub struct DesignFiles {
    pub stimuli: PathBuf,
    pub questions: PathBuf,
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub(crate) fn csv_reader<R: Read>(rdr: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(rdr)
}

pub(crate) fn csv_writer<W: Write>(mut w: W, comment: Option<&str>, file: &str) -> Result<csv::Writer<W>> {
    if let Some(c) = comment {
        writeln!(w, "# {c}").map_err(|e| Error::Csv { file: file.into(), source: e.into() })?;
    }
    Ok(csv::WriterBuilder::new().from_writer(w))
}

pub(crate) fn csv_err(file: &str) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv { file: file.to_string(), source }
}

/// Row index of a record, 1-based and excluding the header.
pub(crate) fn data_row(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map(|p| p.record() as usize).unwrap_or(fallback)
}

pub(crate) fn deserialize_rows<R: Read, T: for<'de> Deserialize<'de>>(rdr: R, file: &str) -> Result<Vec<(usize, T)>> {
    let mut rdr = csv_reader(rdr);
    let headers = rdr.headers().map_err(csv_err(file))?.clone();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(file))?;
        let row = data_row(&rec, i + 1);
        let value: T = rec
            .deserialize(Some(&headers))
            .map_err(|e| Error::validation(file, Some(row), format!("malformed row: {e}")))?;
        out.push((row, value));
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct RawStimulus {
    source_id: String,
    codec_id: String,
    distortion_level: u8,
    bitrate_bpp: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct RawQuestion {
    question_id: String,
    mode: String,
    kind: String,
    source_id: String,
    left_codec: String,
    left_level: u8,
    right_codec: String,
    right_level: u8,
    mirror_of: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawResponse {
    batch_id: String,
    worker_id: String,
    question_id: Option<String>,
    choice: Option<String>,
}

pub fn load_design(files: &DesignFiles) -> Result<ExperimentDesign> {
    let s = open(&files.stimuli)?;
    let q = open(&files.questions)?;
    read_design(s, q, &files.stimuli.display().to_string(), &files.questions.display().to_string())
}

pub fn read_design<S: Read, Q: Read>(
    stimuli: S,
    questions: Q,
    stimuli_name: &str,
    questions_name: &str,
) -> Result<ExperimentDesign> {
    let stimulus_rows = deserialize_rows::<_, RawStimulus>(stimuli, stimuli_name)?
        .into_iter()
        .map(|(row, r)| StimulusRow {
            row,
            stimulus: Stimulus {
                source_id: r.source_id,
                codec_id: r.codec_id,
                bitrate: r.bitrate_bpp,
                distortion_level: r.distortion_level,
            },
        })
        .collect();

    let mut question_rows = Vec::new();
    for (row, r) in deserialize_rows::<_, RawQuestion>(questions, questions_name)? {
        let mode = Mode::parse(&r.mode)
            .ok_or_else(|| Error::validation(questions_name, Some(row), format!("unknown mode {:?}", r.mode)))?;
        let kind = QuestionKind::parse(&r.kind)
            .ok_or_else(|| Error::validation(questions_name, Some(row), format!("unknown kind {:?}", r.kind)))?;
        if r.question_id.is_empty() {
            return Err(Error::validation(questions_name, Some(row), "empty question_id"));
        }
        question_rows.push(QuestionRow {
            row,
            question_id: r.question_id,
            mode,
            kind,
            source_id: r.source_id,
            left_codec: r.left_codec,
            left_level: r.left_level,
            right_codec: r.right_codec,
            right_level: r.right_level,
            mirror_of: r.mirror_of.filter(|m| !m.is_empty()),
        });
    }

    ExperimentDesign::from_rows(stimulus_rows, question_rows, stimuli_name, questions_name)
}

/// Writes `stimuli.csv` and `questions.csv` contents.
pub fn write_design<S: Write, Q: Write>(
    design: &ExperimentDesign,
    stimuli: S,
    questions: Q,
    comment: Option<&str>,
) -> Result<()> {
    let (srows, qrows) = design.to_rows();

    let mut w = csv_writer(stimuli, comment, "stimuli")?;
    w.write_record(["source_id", "codec_id", "distortion_level", "bitrate_bpp"]).map_err(csv_err("stimuli"))?;
    for StimulusRow { stimulus: s, .. } in &srows {
        w.write_record([
            s.source_id.as_str(),
            s.codec_id.as_str(),
            &s.distortion_level.to_string(),
            &s.bitrate.map(|b| b.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err("stimuli"))?;
    }
    w.flush().map_err(|e| Error::Csv { file: "stimuli".into(), source: e.into() })?;

    let mut w = csv_writer(questions, comment, "questions")?;
    w.write_record([
        "question_id",
        "mode",
        "kind",
        "source_id",
        "left_codec",
        "left_level",
        "right_codec",
        "right_level",
        "mirror_of",
    ])
    .map_err(csv_err("questions"))?;
    for q in &qrows {
        w.write_record([
            q.question_id.as_str(),
            q.mode.as_str(),
            q.kind.as_str(),
            &q.source_id,
            &q.left_codec,
            &q.left_level.to_string(),
            &q.right_codec,
            &q.right_level.to_string(),
            q.mirror_of.as_deref().unwrap_or(""),
        ])
        .map_err(csv_err("questions"))?;
    }
    w.flush().map_err(|e| Error::Csv { file: "questions".into(), source: e.into() })?;
    Ok(())
}

pub fn load_responses(path: &Path, design: &ExperimentDesign) -> Result<Vec<BatchRecord>> {
    read_responses(open(path)?, design, &path.display().to_string())
}

/// Groups response rows by `batch_id`. A row with an empty question id and
/// choice declares a batch without recording a response; batches left
/// empty are dropped with a warning.
pub fn read_responses<R: Read>(rdr: R, design: &ExperimentDesign, file: &str) -> Result<Vec<BatchRecord>> {
    struct Acc {
        worker_id: String,
        mode: Option<Mode>,
        responses: Vec<Response>,
    }
    let mut batches: BTreeMap<String, Acc> = BTreeMap::new();

    for (row, r) in deserialize_rows::<_, RawResponse>(rdr, file)? {
        if r.batch_id.is_empty() {
            return Err(Error::validation(file, Some(row), "empty batch_id"));
        }
        let acc = batches.entry(r.batch_id.clone()).or_insert_with(|| Acc {
            worker_id: r.worker_id.clone(),
            mode: None,
            responses: Vec::new(),
        });
        if acc.worker_id != r.worker_id {
            return Err(Error::validation(
                file,
                Some(row),
                format!("batch {} mixes workers {} and {}", r.batch_id, acc.worker_id, r.worker_id),
            ));
        }
        let question_id = r.question_id.unwrap_or_default();
        let choice_code = r.choice.unwrap_or_default();
        if question_id.is_empty() && choice_code.is_empty() {
            continue;
        }
        let question = design
            .question_index(&question_id)
            .ok_or_else(|| Error::validation(file, Some(row), format!("unknown question_id {question_id:?}")))?;
        let choice = Choice::parse(&choice_code).ok_or_else(|| {
            Error::validation(file, Some(row), format!("choice {choice_code:?} is not one of L, R, N"))
        })?;
        let mode = design.question(question).mode;
        match acc.mode {
            None => acc.mode = Some(mode),
            Some(m) if m != mode => {
                return Err(Error::validation(
                    file,
                    Some(row),
                    format!("batch {} mixes {m} and {mode} questions", r.batch_id),
                ))
            }
            _ => {}
        }
        acc.responses.push(Response { question, choice });
    }

    let mut out = Vec::with_capacity(batches.len());
    for (batch_id, acc) in batches {
        match acc.mode {
            Some(mode) => out.push(BatchRecord { batch_id, worker_id: acc.worker_id, mode, responses: acc.responses }),
            None => warn!("{file}: batch {batch_id} has no responses; dropped"),
        }
    }
    Ok(out)
}

/// Writes responses sorted by (batch_id, question_id).
pub fn write_responses<W: Write>(
    design: &ExperimentDesign,
    batches: &[BatchRecord],
    out: W,
    comment: Option<&str>,
) -> Result<()> {
    let mut rows: Vec<(&str, &str, &str, Choice)> = batches
        .iter()
        .flat_map(|b| {
            b.responses.iter().map(move |r| {
                (b.batch_id.as_str(), b.worker_id.as_str(), design.question(r.question).question_id.as_str(), r.choice)
            })
        })
        .collect();
    rows.sort_by(|a, b| (a.0, a.2).cmp(&(b.0, b.2)));

    let mut w = csv_writer(out, comment, "responses")?;
    w.write_record(["batch_id", "worker_id", "question_id", "choice"]).map_err(csv_err("responses"))?;
    for (batch, worker, question, choice) in rows {
        w.write_record([batch, worker, question, choice.code()]).map_err(csv_err("responses"))?;
    }
    w.flush().map_err(|e| Error::Csv { file: "responses".into(), source: e.into() })?;
    Ok(())
}
