mod common;

use common::*;
use jnd_core::dataset::{read_design, BatchRecord, Choice, ExperimentDesign, Response};
use jnd_core::scale::{fit, negative_log_likelihood, FitConfig, ResponseSet, ScaleModel, JND_UNIT_Z};
use jnd_core::simulate::{generate_design, simulate, ObserverProfile, StudyDesignSpec};
use jnd_core::Error;
use statrs::distribution::{ContinuousCDF, Normal};

const STIMULI: &str = "\
source_id,codec_id,distortion_level,bitrate_bpp
s1,ref,0,
s1,jpeg,1,1.0
s1,jpeg,2,0.5
";

/// Level-vs-reference PTC questions only.
const QUESTIONS: &str = "\
question_id,mode,kind,source_id,left_codec,left_level,right_codec,right_level,mirror_of
q1,PTC,same_codec,s1,jpeg,1,ref,0,
q2,PTC,same_codec,s1,jpeg,2,ref,0,
";

fn tiny_design() -> ExperimentDesign {
    read_design(STIMULI.as_bytes(), QUESTIONS.as_bytes(), "stimuli", "questions").unwrap()
}

/// One batch holding `counts[q] = (left, right, not_sure)` answers.
fn batch_with(design: &ExperimentDesign, counts: &[(&str, usize, usize, usize)]) -> BatchRecord {
    let mut responses = Vec::new();
    for &(qid, l, r, n) in counts {
        let question = design.question_index(qid).unwrap();
        for (choice, k) in [(Choice::Left, l), (Choice::Right, r), (Choice::NotSure, n)] {
            responses.extend((0..k).map(|_| Response { question, choice }));
        }
    }
    BatchRecord { batch_id: "b1".into(), worker_id: "w1".into(), mode: design.questions()[0].mode, responses }
}

#[test]
fn two_level_fit_matches_closed_form() {
    // With one free value per level the MLE reproduces Φ⁻¹(fraction)/z.
    let design = tiny_design();
    let batch = batch_with(&design, &[("q1", 70, 30, 0), ("q2", 90, 10, 0)]);
    let data = ResponseSet::from_batches(&design, [&batch]);
    let cfg = FitConfig { tolerance: 1e-14, grad_tolerance: 1e-12, ..Default::default() };
    let model = fit(&data, &cfg).unwrap();
    let normal = Normal::standard();
    for (rate, frac) in [(1.0, 0.7), (0.5, 0.9)] {
        let expected = normal.inverse_cdf(frac) / JND_UNIT_Z;
        let got = model.jnd_at("s1", "jpeg", rate).unwrap();
        assert!((got - expected).abs() < 1e-6, "r = {rate}: {got} vs {expected}");
    }
}

#[test]
fn not_sure_counts_half_each_way() {
    let design = tiny_design();
    let split = batch_with(&design, &[("q1", 60, 20, 20), ("q2", 80, 0, 20)]);
    let explicit = batch_with(&design, &[("q1", 70, 30, 0), ("q2", 90, 10, 0)]);
    let cfg = FitConfig { tolerance: 1e-14, grad_tolerance: 1e-12, ..Default::default() };
    let a = fit(&ResponseSet::from_batches(&design, [&split]), &cfg).unwrap();
    let b = fit(&ResponseSet::from_batches(&design, [&explicit]), &cfg).unwrap();
    for r in [0.5, 0.75, 1.0] {
        let (x, y) = (a.jnd_at("s1", "jpeg", r).unwrap(), b.jnd_at("s1", "jpeg", r).unwrap());
        assert!((x - y).abs() < 1e-6, "{x} vs {y}");
    }
}

#[test]
fn all_not_sure_collapses_the_scale() {
    let design = tiny_design();
    let batch = batch_with(&design, &[("q1", 0, 0, 50), ("q2", 0, 0, 50)]);
    let model = fit(&ResponseSet::from_batches(&design, [&batch]), &FitConfig::default()).unwrap();
    for r in [0.5, 1.0] {
        assert!(model.jnd_at("s1", "jpeg", r).unwrap() < 1e-3);
    }
}

#[test]
fn empty_responses_are_an_error() {
    let design = tiny_design();
    let data = ResponseSet::from_batches(&design, std::iter::empty());
    assert!(matches!(fit(&data, &FitConfig::default()), Err(Error::EmptyResponses(_))));
}

fn small_study(seed: u64, notsure: f64, per_triplet: usize) -> (ExperimentDesign, ScaleModel, Vec<BatchRecord>) {
    let codecs = ["jpeg", "vvc"];
    let spec = StudyDesignSpec {
        btc_responses_per_triplet: per_triplet,
        ptc_responses_per_triplet: per_triplet,
        ..single_source_spec(&codecs, seed)
    };
    let study = generate_design(&spec).unwrap();
    let names: Vec<String> = codecs.iter().map(|c| c.to_string()).collect();
    let truth = random_truth(&spec.sources, &names, seed);
    let batches = simulate(&study, &truth, &[ObserverProfile::thurstonian(notsure, 1)], seed).unwrap();
    (study.design, truth, batches)
}

#[test]
fn nll_matches_direct_sum() {
    let (design, truth, batches) = small_study(3, 0.1, 5);
    let data = ResponseSet::from_batches(&design, &batches);
    let normal = Normal::standard();
    let mut direct = 0.0;
    for b in &batches {
        for r in &b.responses {
            let q = design.question(r.question);
            if q.kind == jnd_core::dataset::QuestionKind::Trap {
                continue;
            }
            let l = truth.perceived(&design, q.left, q.mode).unwrap();
            let rr = truth.perceived(&design, q.right, q.mode).unwrap();
            let p = normal.cdf(JND_UNIT_Z * (l - rr)).clamp(1e-12, 1.0 - 1e-12);
            direct -= match r.choice {
                Choice::Left => p.ln(),
                Choice::Right => (1.0 - p).ln(),
                Choice::NotSure => 0.5 * (p.ln() + (1.0 - p).ln()),
            };
        }
    }
    let nll = negative_log_likelihood(&truth, &data).unwrap();
    assert!((nll - direct).abs() <= 1e-9 * direct.abs(), "{nll} vs {direct}");
}

#[test]
fn truth_beats_perturbed_parameters() {
    let (design, truth, batches) = small_study(5, 0.0, 120);
    let data = ResponseSet::from_batches(&design, &batches);
    let at_truth = negative_log_likelihood(&truth, &data).unwrap();
    for factor in [0.9, 1.1] {
        for which in 0..2 {
            let mut m = truth.clone();
            for curve in m.sources.get_mut("src01").unwrap().codecs.values_mut() {
                if which == 0 {
                    curve.alpha *= factor;
                } else {
                    curve.beta *= factor;
                }
            }
            assert!(negative_log_likelihood(&m, &data).unwrap() > at_truth);
        }
    }
}

#[test]
fn fit_recovers_simulated_curves() {
    let (design, truth, batches) = small_study(11, 0.0, 120);
    let model = fit(&ResponseSet::from_batches(&design, &batches), &FitConfig::default()).unwrap();
    for codec in ["jpeg", "vvc"] {
        let err = sup_norm_error(&model, &truth, "src01", codec, 100);
        assert!(err <= 0.15, "{codec}: {err}");
    }
    let stats = &model.sources["src01"].stats;
    assert!(stats.converged && stats.starts == 5);
}

#[test]
fn nelder_mead_agrees_with_default_optimizer() {
    let (design, _, batches) = small_study(13, 0.0, 40);
    let data = ResponseSet::from_batches(&design, &batches);
    let a = fit(&data, &FitConfig::default()).unwrap();
    let cfg = FitConfig { optimizer: jnd_core::scale::Optimizer::NelderMead, max_iters: 20000, ..Default::default() };
    let b = fit(&data, &cfg).unwrap();
    let (na, nb) = (negative_log_likelihood(&a, &data).unwrap(), negative_log_likelihood(&b, &data).unwrap());
    assert!((na - nb).abs() < 1e-3 * na.abs().max(1.0), "{na} vs {nb}");
}
