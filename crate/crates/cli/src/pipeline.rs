//! The pipeline stages behind each subcommand.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use anyhow::{bail, Result};
use jnd_core::dataset::{
    load_design, load_jnd_scores, load_metric_scores, load_responses, write_design, write_responses, BatchRecord,
    DesignFiles, ExperimentDesign, JndTable, MetricScoreTable, Mode,
};
use jnd_core::metrics::{evaluate, mrr_matrix, MetricReport, MrrMatrix};
use jnd_core::scale::{
    bitrate_grid, bootstrap, fit, BootstrapBand, BootstrapConfig, CodecCurve, FitConfig, ResponseSet, ScaleModel,
};
use jnd_core::screening::{screen_all, BatchLabel, ScreeningReport};
use jnd_core::simulate::{generate_design, simulate, synthetic_metric_scores, truth_jnd};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::artifacts::{num, opt_num, OutDir};
use crate::config::{ModeSelection, PipelineConfig};

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub out: OutDir,
}

#[derive(Serialize)]
struct ModeCounts {
    batches: usize,
    responses: usize,
    workers: usize,
}

#[derive(Serialize)]
struct ValidationReport {
    design: jnd_core::dataset::DesignSummary,
    responses: BTreeMap<String, ModeCounts>,
    metrics: Option<Vec<String>>,
    jnd_scores: Option<usize>,
}

#[derive(Serialize)]
struct ThresholdEntry {
    mode: Mode,
    threshold: f64,
    batches: usize,
    inlier: usize,
    screened: usize,
    outlier: usize,
    relabeled_inlier: usize,
    relabeled_outlier: usize,
    exchange_applied: bool,
}

#[derive(Serialize)]
struct Thresholds {
    thresholds: Vec<ThresholdEntry>,
}

#[derive(Serialize)]
struct ModelFile<'a> {
    mode: ModeSelection,
    batches_used: usize,
    model: &'a ScaleModel,
}

#[derive(Serialize)]
struct BootstrapSummary {
    requested: usize,
    used: usize,
    failed: usize,
    level: f64,
}

#[derive(Serialize)]
struct LogisticEntry<'a> {
    scheme: &'a str,
    group: &'a str,
    metric: &'a str,
    n: usize,
    params: Option<jnd_core::metrics::Logistic4>,
    note: Option<&'a str>,
}

#[derive(Serialize)]
struct LogisticFits<'a> {
    global_logistic: bool,
    fits: Vec<LogisticEntry<'a>>,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    truth: &'a ScaleModel,
}

impl Pipeline {
    fn design_files(&self) -> DesignFiles {
        DesignFiles {
            stimuli: self.cfg.input(&self.cfg.inputs.stimuli),
            questions: self.cfg.input(&self.cfg.inputs.questions),
        }
    }

    pub fn load_design(&self) -> Result<ExperimentDesign> {
        Ok(load_design(&self.design_files())?)
    }

    pub fn load_batches(&self, design: &ExperimentDesign) -> Result<Vec<BatchRecord>> {
        Ok(load_responses(&self.cfg.input(&self.cfg.inputs.responses), design)?)
    }

    fn load_metrics(&self, design: &ExperimentDesign) -> Result<MetricScoreTable> {
        Ok(load_metric_scores(&self.cfg.input(&self.cfg.inputs.metrics), design)?)
    }

    fn selected(&self, batches: &[BatchRecord]) -> Vec<BatchRecord> {
        batches
            .iter()
            .filter(|b| match self.cfg.mode {
                ModeSelection::Both => true,
                ModeSelection::Btc => b.mode == Mode::Btc,
                ModeSelection::Ptc => b.mode == Mode::Ptc,
            })
            .cloned()
            .collect()
    }

    fn fit_config(&self) -> Result<FitConfig> {
        Ok(FitConfig { seed: self.cfg.seed_for("fit", false)?, ..self.cfg.fit.clone() })
    }

    /// Ingests every input that is present; the design and responses are
    /// mandatory, metric scores are checked when the file exists.
    pub fn validate(&self) -> Result<ExperimentDesign> {
        let design = self.load_design()?;
        let batches = self.load_batches(&design)?;
        let mut responses = BTreeMap::new();
        for mode in [Mode::Btc, Mode::Ptc] {
            let of_mode: Vec<&BatchRecord> = batches.iter().filter(|b| b.mode == mode).collect();
            let workers: BTreeSet<&str> = of_mode.iter().map(|b| b.worker_id.as_str()).collect();
            responses.insert(
                mode.to_string(),
                ModeCounts {
                    batches: of_mode.len(),
                    responses: of_mode.iter().map(|b| b.responses.len()).sum(),
                    workers: workers.len(),
                },
            );
        }
        let metrics_path = self.cfg.input(&self.cfg.inputs.metrics);
        let metrics = if metrics_path.exists() {
            Some(self.load_metrics(&design)?.metrics().to_vec())
        } else {
            log::warn!("{} not found; metric scores not validated", metrics_path.display());
            None
        };
        let jnd_scores = match &self.cfg.inputs.jnd_scores {
            Some(p) => Some(load_jnd_scores(&self.cfg.input(p), &design)?.values().len()),
            None => None,
        };
        let report = ValidationReport { design: design.summary(), responses, metrics, jnd_scores };
        self.out.json("validation_report.json", &report)?;
        let total: usize = report.responses.values().map(|c| c.responses).sum();
        println!(
            "validate: {} stimuli, {} questions, {} responses in {} batches",
            report.design.stimuli,
            report.design.questions,
            total,
            batches.len()
        );
        Ok(design)
    }

    pub fn screen(&self, design: &ExperimentDesign, batches: &[BatchRecord]) -> Result<Vec<ScreeningReport>> {
        let subset = self.selected(batches);
        if subset.is_empty() {
            bail!(jnd_core::Error::EmptyResponses(None));
        }
        let reports = screen_all(&subset, design, &self.cfg.screening, &self.fit_config()?)?;
        let mut rows = Vec::new();
        let mut entries = Vec::new();
        for r in &reports {
            for b in &r.batches {
                rows.push(vec![
                    b.batch_id.clone(),
                    b.mode.to_string(),
                    num(b.accuracy),
                    num(b.consistency),
                    num(b.combined),
                    b.label.as_str().to_string(),
                    opt_num(b.mean_log_likelihood),
                ]);
            }
            entries.push(ThresholdEntry {
                mode: r.mode,
                threshold: r.threshold,
                batches: r.batches.len(),
                inlier: r.count(BatchLabel::Inlier),
                screened: r.count(BatchLabel::Screened),
                outlier: r.count(BatchLabel::Outlier),
                relabeled_inlier: r.relabeled_inlier,
                relabeled_outlier: r.relabeled_outlier,
                exchange_applied: r.exchange_applied,
            });
            println!(
                "screen: {} threshold {:.4}, {} of {} batches removed ({} screened, {} outliers)",
                r.mode,
                r.threshold,
                r.batches.len() - r.count(BatchLabel::Inlier),
                r.batches.len(),
                r.count(BatchLabel::Screened),
                r.count(BatchLabel::Outlier)
            );
        }
        self.out.csv(
            "screening_report.csv",
            &["batch_id", "mode", "accuracy", "consistency", "combined", "label", "mean_log_likelihood"],
            &rows,
        )?;
        self.out.json("thresholds.json", &Thresholds { thresholds: entries })?;
        Ok(reports)
    }

    /// Responses of the batches labeled inlier.
    pub fn inlier_data(
        &self,
        design: &ExperimentDesign,
        batches: &[BatchRecord],
        reports: &[ScreeningReport],
    ) -> (ResponseSet, usize) {
        if !self.cfg.apply_screening {
            let used = self.selected(batches);
            return (ResponseSet::from_batches(design, &used), used.len());
        }
        let keep: HashSet<(&str, Mode)> =
            reports.iter().flat_map(|r| r.inlier_ids().into_iter().map(move |id| (id, r.mode))).collect();
        let used: Vec<&BatchRecord> =
            batches.iter().filter(|b| keep.contains(&(b.batch_id.as_str(), b.mode))).collect();
        (ResponseSet::from_batches(design, used.iter().copied()), used.len())
    }

    pub fn fit(&self, design: &ExperimentDesign, data: &ResponseSet, batches_used: usize) -> Result<ScaleModel> {
        let model = fit(data, &self.fit_config()?)?;
        for (source, sm) in &model.sources {
            if !sm.stats.converged {
                log::warn!("fit for source {source} stopped before convergence");
            }
        }
        self.out.json("model.json", &ModelFile { mode: self.cfg.mode, batches_used, model: &model })?;
        self.write_curves(design, &model, None)?;
        println!("fit: {} sources from {} batches ({} responses)", model.sources.len(), batches_used, data.responses());
        Ok(model)
    }

    fn write_curves(&self, design: &ExperimentDesign, model: &ScaleModel, band: Option<&BootstrapBand>) -> Result<()> {
        let mut rows = Vec::new();
        match band {
            Some(band) => {
                for c in &band.curves {
                    for p in &c.points {
                        rows.push(vec![
                            c.source_id.clone(),
                            c.codec_id.clone(),
                            num(p.bitrate),
                            num(p.jnd),
                            num(p.jnd_lo),
                            num(p.jnd_hi),
                            num(p.boosted_jnd),
                        ]);
                    }
                }
            }
            None => {
                for (source, codec, grid) in bitrate_grid(design, model, self.cfg.bootstrap.grid_points) {
                    for r in grid {
                        rows.push(vec![
                            source.clone(),
                            codec.clone(),
                            num(r),
                            num(model.jnd_at(&source, &codec, r)?),
                            String::new(),
                            String::new(),
                            num(model.boosted_jnd_at(&source, &codec, r)?),
                        ]);
                    }
                }
            }
        }
        self.out.csv(
            "bd_curves.csv",
            &["source", "codec", "bitrate", "jnd", "jnd_lo", "jnd_hi", "boosted_jnd"],
            &rows,
        )?;
        Ok(())
    }

    pub fn bootstrap(
        &self,
        design: &ExperimentDesign,
        data: &ResponseSet,
        model: &ScaleModel,
    ) -> Result<BootstrapBand> {
        let b = &self.cfg.bootstrap;
        let config = BootstrapConfig {
            replicates: b.replicates,
            seed: self.cfg.seed_for("bootstrap", true)?,
            grid_points: b.grid_points,
            max_failure_fraction: b.max_failure_fraction,
            level: b.level,
        };
        let band = bootstrap(data, model, design, &self.fit_config()?, &config)?;
        self.write_curves(design, model, Some(&band))?;
        self.out.json(
            "bootstrap.json",
            &BootstrapSummary { requested: band.requested, used: band.used, failed: band.failed, level: b.level },
        )?;
        println!("bootstrap: {} of {} replicates used", band.used, band.requested);
        Ok(band)
    }

    /// JND values to score metrics against: the configured file, or the
    /// plain scale of `model`.
    pub fn jnd_values(&self, design: &ExperimentDesign, model: Option<&ScaleModel>) -> Result<JndTable> {
        if let Some(p) = &self.cfg.inputs.jnd_scores {
            return Ok(load_jnd_scores(&self.cfg.input(p), design)?);
        }
        let model = model.expect("a model is fitted when no JND file is configured");
        // Stimuli of a (source, codec) that no fitted question touched have
        // no scale; they are left out of the evaluation.
        let full = JndTable::from_fn(design, |i| match model.perceived(design, i, Mode::Ptc) {
            Err(jnd_core::Error::UnknownCodec { .. } | jnd_core::Error::UnknownSource(_)) => Ok(f64::NAN),
            other => other,
        })?;
        let placed = full.subset(|i| {
            let s = design.stimulus(i);
            model.sources.get(&s.source_id).is_some_and(|m| m.curve(&s.codec_id).is_some())
        });
        let dropped = full.values().len() - placed.values().len();
        if dropped > 0 {
            log::warn!("{dropped} stimuli lack a fitted curve and are left out of the metric evaluation");
        }
        Ok(placed)
    }

    pub fn needs_model_for_eval(&self) -> bool {
        self.cfg.inputs.jnd_scores.is_none()
    }

    pub fn eval(&self, design: &ExperimentDesign, jnd: &JndTable) -> Result<(MetricReport, MrrMatrix)> {
        let items: HashSet<usize> = jnd.items().iter().copied().collect();
        let scores = self.load_metrics(design)?.subset(|i| items.contains(&i));
        let report = evaluate(design, &scores, jnd, &self.cfg.eval)?;
        let columns: Vec<&[f64]> = (0..scores.metrics().len()).map(|m| scores.column(m)).collect();
        let matrix = mrr_matrix(scores.metrics(), &columns, jnd.values(), self.cfg.eval.alpha)?;

        let rows: Vec<Vec<String>> = report
            .summaries
            .iter()
            .map(|s| vec![s.metric.clone(), s.scheme.clone(), s.groups.to_string(), num(s.mean_plcc), num(s.mean_srcc)])
            .collect();
        self.out.csv("metric_report.csv", &["metric", "scheme", "groups", "plcc", "srcc"], &rows)?;

        let rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.metric.clone(),
                    r.scheme.clone(),
                    r.group.clone(),
                    r.n.to_string(),
                    num(r.plcc),
                    num(r.srcc),
                    r.note.clone().unwrap_or_default(),
                ]
            })
            .collect();
        self.out.csv("metric_groups.csv", &["metric", "scheme", "group", "n", "plcc", "srcc", "note"], &rows)?;

        let mut header = vec!["metric"];
        header.extend(matrix.metrics.iter().map(String::as_str));
        let grid = |cell: &dyn Fn(usize, usize) -> String| -> Vec<Vec<String>> {
            matrix
                .metrics
                .iter()
                .enumerate()
                .map(|(i, m)| std::iter::once(m.clone()).chain((0..matrix.metrics.len()).map(|j| cell(i, j))).collect())
                .collect()
        };
        self.out.csv("mrr_matrix.csv", &header, &grid(&|i, j| matrix.decisions[i][j].to_string()))?;
        self.out.csv("mrr_z.csv", &header, &grid(&|i, j| num(matrix.z[i][j])))?;

        let fits = LogisticFits {
            global_logistic: self.cfg.eval.global_logistic,
            fits: report
                .rows
                .iter()
                .map(|r| LogisticEntry {
                    scheme: &r.scheme,
                    group: &r.group,
                    metric: &r.metric,
                    n: r.n,
                    params: r.logistic,
                    note: r.note.as_deref(),
                })
                .collect(),
        };
        self.out.json("logistic_fits.json", &fits)?;
        println!("eval: {} metrics over {} stimuli", scores.metrics().len(), jnd.values().len());
        Ok((report, matrix))
    }

    /// Draws a ground truth, generates the design and simulated answers,
    /// and writes them as pipeline inputs.
    pub fn simulate(&self) -> Result<()> {
        let seed = self.cfg.seed_for("simulate", true)?;
        let sim = &self.cfg.simulation;
        let spec = jnd_core::simulate::StudyDesignSpec { seed, ..sim.design.clone() };
        let study = generate_design(&spec)?;
        let truth = self.draw_truth(&spec.sources, &spec.codecs, seed);
        let batches = simulate(&study, &truth, &sim.observers, seed)?;
        let scores = synthetic_metric_scores(&study.design, &truth, sim.metric_noise, seed)?;
        let jnd = truth_jnd(&study.design, &truth)?;

        let comment = self.out.provenance.comment();
        let (mut s, mut q) = (Vec::new(), Vec::new());
        write_design(&study.design, &mut s, &mut q, Some(&comment))?;
        self.out.write("stimuli.csv", &s)?;
        self.out.write("questions.csv", &q)?;
        self.out.with_writer("responses.csv", |w| write_responses(&study.design, &batches, w, Some(&comment)))?;

        let stim = |i: usize| study.design.stimulus(i);
        let mut rows = Vec::new();
        for (m, metric) in scores.metrics().iter().enumerate() {
            for (pos, &i) in scores.items().iter().enumerate() {
                let st = stim(i);
                rows.push(vec![
                    st.source_id.clone(),
                    st.codec_id.clone(),
                    st.distortion_level.to_string(),
                    metric.clone(),
                    num(scores.column(m)[pos]),
                ]);
            }
        }
        self.out.csv("metrics.csv", &["source_id", "codec_id", "distortion_level", "metric_name", "score"], &rows)?;
        let rows: Vec<Vec<String>> = jnd
            .items()
            .iter()
            .zip(jnd.values())
            .map(|(&i, v)| {
                let st = stim(i);
                vec![st.source_id.clone(), st.codec_id.clone(), st.distortion_level.to_string(), num(*v)]
            })
            .collect();
        self.out.csv("truth_jnd.csv", &["source_id", "codec_id", "distortion_level", "jnd"], &rows)?;
        self.out.json("truth.json", &TruthFile { truth: &truth })?;
        let responses: usize = batches.iter().map(|b| b.responses.len()).sum();
        println!(
            "simulate: {} questions, {} batches, {} responses",
            study.design.questions().len(),
            batches.len(),
            responses
        );
        Ok(())
    }

    fn draw_truth(&self, sources: &[String], codecs: &[String], seed: u64) -> ScaleModel {
        let sim = &self.cfg.simulation;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut model = ScaleModel { jnd_unit_z: self.cfg.fit.jnd_unit_z, sources: BTreeMap::new() };
        for s in sources {
            let curves = codecs
                .iter()
                .map(|c| {
                    let curve = CodecCurve {
                        alpha: rng.random_range(sim.alpha[0]..sim.alpha[1]),
                        beta: rng.random_range(sim.beta[0]..sim.beta[1]),
                    };
                    (c.clone(), curve)
                })
                .collect();
            model.sources.insert(
                s.clone(),
                jnd_core::scale::SourceModel {
                    codecs: curves,
                    boosting: jnd_core::scale::BoostingTransfer::Shared(jnd_core::scale::Boosting {
                        gamma1: sim.gamma1,
                        gamma2: sim.gamma2,
                    }),
                    stats: Default::default(),
                },
            );
        }
        model
    }
}
