//! Per-question response tallies, grouped by source.

use std::collections::BTreeMap;

use crate::dataset::{BatchRecord, Choice, ExperimentDesign, QuestionIdx, QuestionKind};

/// A compressed stimulus as seen by one source's likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalStimulus {
    pub codec: usize,
    pub bitrate: f64,
}

/// Answer counts on one question. `None` on a side means the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tally {
    pub question: QuestionIdx,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub boosted: bool,
    pub n_left: u32,
    pub n_right: u32,
    pub n_not_sure: u32,
}

impl Tally {
    pub fn total(&self) -> u32 {
        self.n_left + self.n_right + self.n_not_sure
    }

    /// Effective (left, right) counts with "not sure" split in half.
    pub fn weights(&self) -> (f64, f64) {
        let half = 0.5 * self.n_not_sure as f64;
        (self.n_left as f64 + half, self.n_right as f64 + half)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceData {
    pub source_id: String,
    pub codecs: Vec<String>,
    pub stimuli: Vec<LocalStimulus>,
    pub tallies: Vec<Tally>,
}

impl SourceData {
    pub fn responses(&self) -> u64 {
        self.tallies.iter().map(|t| t.total() as u64).sum()
    }

    pub fn has_boosted(&self) -> bool {
        self.tallies.iter().any(|t| t.boosted && t.total() > 0)
    }

    pub fn has_plain(&self) -> bool {
        self.tallies.iter().any(|t| !t.boosted && t.total() > 0)
    }

    /// Same data with every tally's counts replaced.
    pub fn with_counts(&self, counts: impl IntoIterator<Item = (u32, u32, u32)>) -> SourceData {
        let mut out = self.clone();
        for (t, (l, r, n)) in out.tallies.iter_mut().zip(counts) {
            t.n_left = l;
            t.n_right = r;
            t.n_not_sure = n;
        }
        out
    }
}

/// Model-fitting input: trap questions excluded, one entry per source.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResponseSet {
    pub sources: Vec<SourceData>,
}

impl ResponseSet {
    pub fn from_batches<'a>(design: &ExperimentDesign, batches: impl IntoIterator<Item = &'a BatchRecord>) -> Self {
        let mut counts: BTreeMap<QuestionIdx, [u32; 3]> = BTreeMap::new();
        for batch in batches {
            for r in &batch.responses {
                if design.question(r.question).kind == QuestionKind::Trap {
                    continue;
                }
                let slot = match r.choice {
                    Choice::Left => 0,
                    Choice::Right => 1,
                    Choice::NotSure => 2,
                };
                counts.entry(r.question).or_default()[slot] += 1;
            }
        }

        let mut by_source: BTreeMap<String, Vec<(QuestionIdx, [u32; 3])>> = BTreeMap::new();
        for (q, c) in counts {
            by_source.entry(design.source_of(design.question(q)).to_string()).or_default().push((q, c));
        }

        let sources = by_source
            .into_iter()
            .map(|(source_id, entries)| {
                let mut codecs: Vec<String> = Vec::new();
                let mut stimulus_ids: Vec<usize> = Vec::new();
                for (q, _) in &entries {
                    let q = design.question(*q);
                    for side in [q.left, q.right] {
                        let s = design.stimulus(side);
                        if !s.is_reference() {
                            codecs.push(s.codec_id.clone());
                            stimulus_ids.push(side);
                        }
                    }
                }
                codecs.sort();
                codecs.dedup();
                stimulus_ids.sort_unstable();
                stimulus_ids.dedup();

                let stimuli = stimulus_ids
                    .iter()
                    .map(|&i| {
                        let s = design.stimulus(i);
                        LocalStimulus { codec: codecs.binary_search(&s.codec_id).unwrap(), bitrate: s.bitrate.unwrap() }
                    })
                    .collect();
                let local = |idx: usize| -> Option<usize> {
                    if design.stimulus(idx).is_reference() {
                        None
                    } else {
                        Some(stimulus_ids.binary_search(&idx).unwrap())
                    }
                };
                let tallies = entries
                    .iter()
                    .map(|&(qi, [l, r, n])| {
                        let q = design.question(qi);
                        Tally {
                            question: qi,
                            left: local(q.left),
                            right: local(q.right),
                            boosted: q.mode.is_boosted(),
                            n_left: l,
                            n_right: r,
                            n_not_sure: n,
                        }
                    })
                    .collect();
                SourceData { source_id, codecs, stimuli, tallies }
            })
            .collect();
        ResponseSet { sources }
    }

    pub fn responses(&self) -> u64 {
        self.sources.iter().map(SourceData::responses).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.responses() == 0
    }
}
