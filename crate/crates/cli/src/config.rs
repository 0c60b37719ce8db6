//! Pipeline configuration: a JSON file with flag overrides on top.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use jnd_core::metrics::EvalConfig;
use jnd_core::scale::FitConfig;
use jnd_core::screening::ScreeningConfig;
use jnd_core::simulate::{ObserverProfile, StudyDesignSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Which protocol's responses enter screening and fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    Btc,
    Ptc,
    #[default]
    Both,
}

/// Input file names, resolved against the data directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputFiles {
    pub stimuli: PathBuf,
    pub questions: PathBuf,
    pub responses: PathBuf,
    pub metrics: PathBuf,
    /// Optional per-stimulus JND values; when set, `eval` scores metrics
    /// against them instead of a fitted model.
    pub jnd_scores: Option<PathBuf>,
}

impl Default for InputFiles {
    fn default() -> Self {
        InputFiles {
            stimuli: "stimuli.csv".into(),
            questions: "questions.csv".into(),
            responses: "responses.csv".into(),
            metrics: "metrics.csv".into(),
            jnd_scores: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub grid_points: usize,
    pub level: f64,
    pub max_failure_fraction: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        let d = jnd_core::scale::BootstrapConfig::default();
        BootstrapSettings {
            replicates: d.replicates,
            grid_points: d.grid_points,
            level: d.level,
            max_failure_fraction: d.max_failure_fraction,
        }
    }
}

/// Ground truth and observer population for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSettings {
    pub design: StudyDesignSpec,
    /// Range `[lo, hi)` of the per-codec scale amplitude.
    pub alpha: [f64; 2],
    /// Range `[lo, hi)` of the per-codec decay rate.
    pub beta: [f64; 2],
    pub gamma1: f64,
    pub gamma2: f64,
    /// Batch `i` is answered by `observers[i % len]`.
    pub observers: Vec<ObserverProfile>,
    /// Noise of the synthetic `noisy_truth` metric, in JND.
    pub metric_noise: f64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            design: StudyDesignSpec::default(),
            alpha: [1.0, 4.0],
            beta: [0.5, 3.0],
            gamma1: 2.0,
            gamma2: 0.3,
            observers: vec![
                ObserverProfile::thurstonian(0.02, 1),
                ObserverProfile::thurstonian(0.02, 2),
                ObserverProfile::thurstonian(0.02, 3),
                ObserverProfile::thurstonian(0.02, 4),
                ObserverProfile::spammer(0.02, 5),
            ],
            metric_noise: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Directory holding the input files.
    pub data_dir: PathBuf,
    pub inputs: InputFiles,
    /// Output directory; not part of the provenance hash.
    pub out: PathBuf,
    /// Master seed for fitting multistarts, bootstrap and simulation.
    pub seed: Option<u64>,
    pub mode: ModeSelection,
    /// When false, screening reports are still written but every batch of
    /// the selected modes enters the fit.
    pub apply_screening: bool,
    pub screening: ScreeningConfig,
    pub fit: FitConfig,
    pub bootstrap: BootstrapSettings,
    pub eval: EvalConfig,
    pub simulation: SimulationSettings,
    /// Worker threads; defaults to the available parallelism. Results do
    /// not depend on it and it is not part of the provenance hash.
    pub workers: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data_dir: ".".into(),
            inputs: InputFiles::default(),
            out: "out".into(),
            seed: None,
            mode: ModeSelection::Both,
            apply_screening: true,
            screening: ScreeningConfig::default(),
            fit: FitConfig::default(),
            bootstrap: BootstrapSettings::default(),
            eval: EvalConfig::default(),
            simulation: SimulationSettings::default(),
            workers: None,
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub bootstrap_n: Option<usize>,
    pub alpha: Option<f64>,
    pub workers: Option<usize>,
    pub mode: Option<ModeSelection>,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).with_context(|| format!("{}: cannot read config", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("{}: invalid config", p.display()))?
            }
            None => PipelineConfig::default(),
        };
        cfg.apply(overrides);
        cfg.check()?;
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.data_dir {
            self.data_dir = v.clone();
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if o.seed.is_some() {
            self.seed = o.seed;
        }
        if let Some(v) = o.bootstrap_n {
            self.bootstrap.replicates = v;
        }
        if let Some(v) = o.alpha {
            self.eval.alpha = v;
        }
        if o.workers.is_some() {
            self.workers = o.workers;
        }
        if let Some(v) = o.mode {
            self.mode = v;
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.eval.alpha > 0.0 && self.eval.alpha < 1.0) {
            bail!(jnd_core::Error::Config(format!("alpha {} outside (0, 1)", self.eval.alpha)));
        }
        if self.workers == Some(0) {
            bail!(jnd_core::Error::Config("workers must be positive".into()));
        }
        if self.bootstrap.replicates == 0 {
            bail!(jnd_core::Error::Config("bootstrap replicates must be positive".into()));
        }
        for (name, r) in [("alpha", self.simulation.alpha), ("beta", self.simulation.beta)] {
            if !(r[0] > 0.0 && r[0] < r[1] && r[1].is_finite()) {
                bail!(jnd_core::Error::Config(format!("simulation {name} range must satisfy 0 < lo < hi")));
            }
        }
        Ok(())
    }

    /// Seed for stages whose output depends on it; a missing seed defaults
    /// to 0 unless `required`.
    pub fn seed_for(&self, stage: &str, required: bool) -> Result<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None if required => bail!(jnd_core::Error::Config(format!("{stage} needs a seed (--seed or \"seed\")"))),
            None => Ok(0),
        }
    }

    pub fn input(&self, file: &Path) -> PathBuf {
        self.data_dir.join(file)
    }

    /// SHA-256 of the canonical JSON of every setting that can change an
    /// artifact (the output directory and worker count excluded).
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out = PathBuf::new();
        canon.workers = None;
        let json = serde_json::to_vec(&canon).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
