//! End-to-end acceptance checks, one report line per criterion.
//!
//! Runs without the libtest harness so that every line is printed even
//! when an earlier criterion fails. A failing criterion is reported, not
//! raised: the process exits non-zero on failures only when
//! `JND_KIT_ACCEPTANCE_STRICT` is set, so the rest of the test suite still
//! runs. Panics always fail the target.

mod common;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::*;
use jnd_core::dataset::{load_design, load_jnd_scores, load_metric_scores, load_responses, DesignFiles, Mode};
use jnd_core::metrics::{evaluate, mrr_matrix, mrr_test, plcc, srcc, EvalConfig, Grouping, MrrInputs};
use jnd_core::scale::{
    bootstrap, fit, nll_with_gradient, BootstrapConfig, FitConfig, ParamLayout, ResponseSet, JND_UNIT_Z,
};
use jnd_core::screening::{bin_of, otsu_threshold, screen_all, BatchLabel, ScreeningConfig};
use jnd_core::simulate::{generate_design, simulate, truth_jnd, ObserverKind, ObserverProfile, StudyDesignSpec};
use jnd_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
    /// Every checkable part passes but some part could not be evaluated.
    Partial(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("simulated recovery", criterion_1),
        ("screening removes spammers", criterion_2),
        ("otsu equals exhaustive search", criterion_3),
        ("nll gradient check", criterion_4),
        ("mrr correctness", criterion_5),
        ("correlation oracles", criterion_6),
        ("bootstrap determinism, coverage, width", criterion_7),
        ("published-data reproduction (soft)", criterion_8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("{id} [{name}]: PASS ({secs:.1}s) {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("{id} [{name}]: FAIL ({secs:.1}s) {d}");
            }
            Outcome::Skip(d) => println!("{id} [{name}]: SKIP ({secs:.1}s) {d}"),
            Outcome::Partial(d) => println!("{id} [{name}]: PASS-PARTIAL ({secs:.1}s) {d}"),
        }
    }
    println!("acceptance summary: {failed} criteria failed");
    if failed > 0 && std::env::var_os("JND_KIT_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}

fn codec_names() -> Vec<String> {
    CODECS.iter().map(|c| c.to_string()).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let codecs = codec_names();
    let mut per_codec = vec![0.0; codecs.len()];
    let seeds = 20;
    for seed in 0..seeds {
        let spec = single_source_spec(&CODECS, seed);
        let study = generate_design(&spec).unwrap();
        let truth = random_truth(&spec.sources, &codecs, 1000 + seed);
        let batches = simulate(&study, &truth, &[ObserverProfile::thurstonian(0.0, 0)], seed).unwrap();
        let data = ResponseSet::from_batches(&study.design, &batches);
        let model = match fit(&data, &FitConfig::default()) {
            Ok(m) => m,
            Err(e) => return Outcome::Fail(format!("seed {seed}: fit failed: {e}")),
        };
        for (k, c) in codecs.iter().enumerate() {
            per_codec[k] += sup_norm_error(&model, &truth, "src01", c, 271) / seeds as f64;
        }
    }
    let worst = per_codec.iter().copied().fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 0.15 && secs <= 300.0,
        format!("worst per-codec mean sup-norm error {worst:.4} JND (limit 0.15) over {seeds} seeds in {secs:.1}s"),
    )
}

fn criterion_2() -> Outcome {
    let observers: Vec<ObserverProfile> = (0..5)
        .map(|k| if k == 4 { ObserverProfile::spammer(0.1, 77) } else { ObserverProfile::thurstonian(0.1, 11) })
        .collect();
    let (mut spam, mut spam_removed, mut good, mut good_removed) = (0, 0, 0, 0);
    let mut per_seed = Vec::new();
    for seed in 0..5u64 {
        let spec =
            StudyDesignSpec { ptc_responses_per_triplet: 50, btc_responses_per_triplet: 1, seed, ..Default::default() };
        let study = generate_design(&spec).unwrap();
        let truth = visible_truth(&spec.sources, &spec.codecs, 500 + seed, 2.0);
        let all = simulate(&study, &truth, &observers, 31 + seed).unwrap();
        let batches: Vec<_> = all.into_iter().filter(|b| b.mode == Mode::Ptc).collect();
        assert_eq!(batches.len(), 100);
        let kind_of: HashMap<&str, ObserverKind> = batches
            .iter()
            .map(|b| {
                let index: usize = b.worker_id[1..].parse().unwrap();
                (b.batch_id.as_str(), observers[index % observers.len()].kind)
            })
            .collect();
        let reports = match screen_all(&batches, &study.design, &ScreeningConfig::default(), &FitConfig::default()) {
            Ok(r) => r,
            Err(e) => return Outcome::Fail(format!("seed {seed}: screening failed: {e}")),
        };
        let (mut s, mut sr, mut g, mut gr) = (0, 0, 0, 0);
        for entry in reports.iter().flat_map(|r| &r.batches) {
            let removed = entry.label != BatchLabel::Inlier;
            match kind_of[entry.batch_id.as_str()] {
                ObserverKind::Spammer => {
                    s += 1;
                    sr += removed as usize;
                }
                ObserverKind::Thurstonian => {
                    g += 1;
                    gr += removed as usize;
                }
            }
        }
        per_seed.push(format!("{sr}/{s} spam, {gr}/{g} reliable"));
        spam += s;
        spam_removed += sr;
        good += g;
        good_removed += gr;
    }
    let spam_rate = spam_removed as f64 / spam as f64;
    let good_rate = good_removed as f64 / good as f64;
    verdict(
        spam_rate >= 0.9 && good_rate <= 0.1,
        format!(
            "removed {:.1}% of spammer and {:.1}% of reliable batches [{}]",
            100.0 * spam_rate,
            100.0 * good_rate,
            per_seed.join("; ")
        ),
    )
}

/// Exhaustive Otsu over every bin edge, computed directly from the scores
/// with the class means kept as exact fractions.
fn otsu_oracle(scores: &[f64], bins: usize) -> Option<f64> {
    let idx: Vec<i128> = scores.iter().map(|&s| bin_of(s, bins) as i128).collect();
    let n = idx.len() as i128;
    // Between-class variance ∝ (S0·n1 − S1·n0)² / (n0·n1).
    let mut best: Option<(usize, i128, i128)> = None;
    for k in 1..bins {
        let (lower, upper): (Vec<i128>, Vec<i128>) = idx.iter().partition(|&&b| b < k as i128);
        let (n0, n1) = (lower.len() as i128, upper.len() as i128);
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let (s0, s1): (i128, i128) = (lower.iter().sum(), upper.iter().sum());
        let diff = s0 * n1 - s1 * n0;
        let (num, den) = (diff * diff, n0 * n1);
        if num == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, bn, bd)) => num * bd > bn * den,
        };
        if better {
            best = Some((k, num, den));
        }
    }
    debug_assert!(n > 0);
    best.map(|(k, _, _)| k as f64 / bins as f64)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = Vec::new();
    let mut degenerate = 0;
    for set in 0..1000 {
        let len = rng.random_range(2..120);
        let scores: Vec<f64> = match set % 3 {
            // Continuous scores.
            0 => (0..len).map(|_| rng.random::<f64>()).collect(),
            // Coarse, heavily tied scores like those of short batches.
            1 => (0..len).map(|_| rng.random_range(0..=16) as f64 / 16.0).collect(),
            // Two clusters.
            _ => (0..len)
                .map(|_| {
                    let centre = if rng.random_bool(0.3) { 0.45 } else { 0.85 };
                    (centre + 0.08 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)
                })
                .collect(),
        };
        let expected = otsu_oracle(&scores, 256);
        let got = otsu_threshold(&scores, 256);
        match (expected, got) {
            (Some(e), Ok(g)) if e == g => {}
            (None, Err(Error::Degenerate(_))) => degenerate += 1,
            (e, g) => mismatches.push(format!("set {set}: oracle {e:?} vs {g:?}")),
        }
    }
    verdict(
        mismatches.is_empty(),
        format!(
            "1000 sets, {degenerate} degenerate on both sides, {} mismatches {:?}",
            mismatches.len(),
            mismatches.first()
        ),
    )
}

fn criterion_4() -> Outcome {
    let codecs = ["jpeg", "vvc", "jpeg_ai"];
    let spec = StudyDesignSpec {
        btc_responses_per_triplet: 20,
        ptc_responses_per_triplet: 10,
        ..single_source_spec(&codecs, 4)
    };
    let study = generate_design(&spec).unwrap();
    let names: Vec<String> = codecs.iter().map(|c| c.to_string()).collect();
    let truth = random_truth(&spec.sources, &names, 4);
    let batches = simulate(&study, &truth, &[ObserverProfile::thurstonian(0.15, 1)], 4).unwrap();
    let data = ResponseSet::from_batches(&study.design, &batches);
    let source = &data.sources[0];
    let layout = ParamLayout::new(source.codecs.len(), false);

    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let mut theta = vec![0.0; layout.len()];
        for c in 0..source.codecs.len() {
            theta[layout.ln_alpha(c)] = rng.random_range(0.5f64..5.0).ln();
            theta[layout.ln_beta(c)] = rng.random_range(0.3f64..4.0).ln();
        }
        theta[layout.ln_gamma1(0)] = rng.random_range(0.5f64..4.0).ln();
        theta[layout.gamma2(0)] = rng.random_range(0.01..1.0);
        let mut grad = vec![0.0; theta.len()];
        nll_with_gradient(&theta, source, &layout, JND_UNIT_Z, Some(&mut grad));
        let mut num = 0.0;
        let mut den = 0.0;
        for k in 0..theta.len() {
            let h = 1e-5 * theta[k].abs().max(1.0);
            let f = |dx: f64| {
                let mut t = theta.clone();
                t[k] += dx;
                nll_with_gradient(&t, source, &layout, JND_UNIT_Z, None)
            };
            // Five-point stencil.
            let fd = (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h);
            num += (grad[k] - fd).powi(2);
            den += fd.powi(2);
        }
        worst = worst.max(num.sqrt() / den.sqrt().max(1e-12));
    }
    verdict(worst <= 1e-5, format!("worst relative gradient error {worst:.2e} over 50 points (limit 1e-5)"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn criterion_5() -> Outcome {
    let mut problems = Vec::new();

    // Z = 0 exactly on equal correlations, exact antisymmetry.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let a = rng.random_range(-0.99..0.99);
        let b = rng.random_range(-0.99..0.99);
        let rxy = rng.random_range(-0.9..0.99);
        let n = rng.random_range(10..1000);
        let same = mrr_test(MrrInputs { r_xz: a, r_yz: a, r_xy: rxy, n }, 0.05, true).unwrap();
        if same.z != 0.0 {
            problems.push(format!("Z = {} for equal correlations", same.z));
        }
        let xy = mrr_test(MrrInputs { r_xz: a, r_yz: b, r_xy: rxy, n }, 0.05, true).unwrap();
        let yx = mrr_test(MrrInputs { r_xz: b, r_yz: a, r_xy: rxy, n }, 0.05, true).unwrap();
        if xy.z != -yx.z || xy.decision != -yx.decision {
            problems.push(format!("not antisymmetric at ({a}, {b}, {rxy})"));
        }
    }

    // High-precision reference values.
    let mut rdr = csv::Reader::from_path(fixture("mrr_reference.csv")).unwrap();
    let mut worst: f64 = 0.0;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let v = |i: usize| rec[i].parse::<f64>().unwrap();
        let inputs = MrrInputs { r_xz: v(0), r_yz: v(1), r_xy: v(2), n: rec[3].parse().unwrap() };
        rows += 1;
        for (cap, col) in [(true, 4), (false, 5)] {
            let expected = v(col);
            match mrr_test(inputs, 0.05, cap) {
                Ok(r) if expected.is_finite() => {
                    worst = worst.max((r.z - expected).abs() / expected.abs().max(1.0));
                }
                Err(Error::NonFinite(_)) if expected.is_nan() => {}
                other => problems.push(format!("{inputs:?} cap={cap}: {other:?} vs {expected}")),
            }
        }
    }
    if worst > 1e-10 {
        problems.push(format!("max deviation from reference {worst:.2e}"));
    }

    // Matrix antisymmetry.
    let t: Vec<f64> = (0..300).map(|_| rng.random::<f64>()).collect();
    let cols: Vec<Vec<f64>> =
        (0..5).map(|k| t.iter().map(|v| v + ((k + 1) as f64 * 0.1) * rng.random::<f64>()).collect()).collect();
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    let names: Vec<String> = (0..5).map(|k| format!("m{k}")).collect();
    let m = mrr_matrix(&names, &refs, &t, 0.05).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            if m.decisions[i][j] != -m.decisions[j][i] || m.z[i][j] != -m.z[j][i] {
                problems.push(format!("matrix not antisymmetric at ({i}, {j})"));
            }
        }
    }

    // CVVDP vs PSNR-Y on 300 items is significant for any plausible r_xy.
    for k in 0..=90 {
        let r_xy = -0.5 + k as f64 * 0.015;
        let r = mrr_test(MrrInputs { r_xz: 0.961, r_yz: 0.816, r_xy, n: 300 }, 0.05, true).unwrap();
        if r.decision != 1 {
            problems.push(format!("CVVDP vs PSNR-Y not +1 at r_xy = {r_xy}"));
        }
    }

    // GMSD vs VMAF-neg needs the empirical r_xy of the published scores.
    let mut partial = false;
    let gmsd = match published_dir() {
        Some(dir) => match published_gmsd_vmaf_decision(&dir) {
            Ok(d) => {
                if d != 0 {
                    problems.push(format!("GMSD vs VMAF-neg decision {d}, expected 0"));
                }
                format!("GMSD vs VMAF-neg decision {d}")
            }
            Err(e) => {
                problems.push(format!("GMSD vs VMAF-neg: {e}"));
                "GMSD vs VMAF-neg errored".into()
            }
        },
        None => {
            partial = true;
            "GMSD vs VMAF-neg clause NOT VERIFIED (published scores absent; decision is 0 only for r_xy <= 0.55)".into()
        }
    };

    let detail = format!(
        "{rows} reference triples, max rel. deviation {worst:.1e}; {gmsd}; problems: {:?}",
        problems.iter().take(3).collect::<Vec<_>>()
    );
    match (problems.is_empty(), partial) {
        (false, _) => Outcome::Fail(detail),
        (true, true) => Outcome::Partial(detail),
        (true, false) => Outcome::Pass(detail),
    }
}

fn brute_plcc(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let mx = sx / n;
    let my = sy / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

/// Rank by counting: 1 + #smaller + (#equal − 1) / 2.
fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for trial in 0..500 {
        let n = rng.random_range(20..=300);
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.random_range(-3.0..3.0);
                if trial % 2 == 0 {
                    (v * 4.0).round() / 4.0
                } else {
                    v
                }
            })
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                let e: f64 = rng.random_range(-1.0..1.0);
                let w = v.powi(3) + 3.0 * e;
                if trial % 3 == 0 {
                    w.round()
                } else {
                    w
                }
            })
            .collect();
        let p = plcc(&x, &y).unwrap();
        let s = srcc(&x, &y).unwrap();
        worst = worst.max((p - brute_plcc(&x, &y)).abs());
        worst = worst.max((s - brute_plcc(&brute_ranks(&x), &brute_ranks(&y))).abs());
    }
    verdict(worst <= 1e-12, format!("500 random vectors of 20-300 points with ties, max deviation {worst:.1e}"))
}

fn criterion_7() -> Outcome {
    let mut problems = Vec::new();

    // Determinism, including across worker counts.
    {
        let codecs = ["jpeg", "vvc"];
        let spec = StudyDesignSpec {
            btc_responses_per_triplet: 40,
            ptc_responses_per_triplet: 20,
            ..single_source_spec(&codecs, 70)
        };
        let study = generate_design(&spec).unwrap();
        let names: Vec<String> = codecs.iter().map(|c| c.to_string()).collect();
        let truth = random_truth(&spec.sources, &names, 70);
        let batches = simulate(&study, &truth, &[ObserverProfile::thurstonian(0.05, 2)], 70).unwrap();
        let data = ResponseSet::from_batches(&study.design, &batches);
        let cfg = FitConfig::default();
        let full = fit(&data, &cfg).unwrap();
        let bcfg = BootstrapConfig { replicates: 40, seed: 9, ..Default::default() };
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| bootstrap(&data, &full, &study.design, &cfg, &bcfg).unwrap())
        };
        let a = run(1);
        if a != run(1) || a != run(3) {
            problems.push("bootstrap not deterministic".to_string());
        }
    }

    // Coverage over 100 small studies.
    let (mut covered, mut points) = (0usize, 0usize);
    {
        let codecs = ["jpeg", "vvc"];
        let names: Vec<String> = codecs.iter().map(|c| c.to_string()).collect();
        for study_seed in 0..100u64 {
            let spec = single_source_spec(&codecs, 7000 + study_seed);
            let study = generate_design(&spec).unwrap();
            let truth = random_truth(&spec.sources, &names, 7000 + study_seed);
            // Observers never answer "not sure" here: the even split of those
            // answers in the likelihood shrinks the scale when they occur
            // independently of the stimuli, and coverage would then measure
            // that bias rather than the bootstrap.
            let batches = simulate(&study, &truth, &[ObserverProfile::thurstonian(0.0, 3)], study_seed).unwrap();
            let data = ResponseSet::from_batches(&study.design, &batches);
            let cfg = FitConfig::default();
            let full = match fit(&data, &cfg) {
                Ok(m) => m,
                Err(e) => {
                    problems.push(format!("study {study_seed}: {e}"));
                    continue;
                }
            };
            let bcfg = BootstrapConfig { replicates: 200, seed: study_seed, ..Default::default() };
            let band = match bootstrap(&data, &full, &study.design, &cfg, &bcfg) {
                Ok(b) => b,
                Err(e) => {
                    problems.push(format!("study {study_seed}: {e}"));
                    continue;
                }
            };
            for curve in &band.curves {
                for p in &curve.points {
                    let t = truth.jnd_at(&curve.source_id, &curve.codec_id, p.bitrate).unwrap();
                    points += 1;
                    covered += (p.jnd_lo <= t && t <= p.jnd_hi) as usize;
                }
            }
        }
    }
    let coverage = covered as f64 / points.max(1) as f64;
    if coverage < 0.9 {
        problems.push(format!("coverage {coverage:.3} < 0.90"));
    }

    // Width on full-scale studies with the full replicate count.
    let (mut width_ok, mut width_points, mut worst_excess) = (0usize, 0usize, f64::NEG_INFINITY);
    let mut studies_ok = 0;
    let width_seeds = 77..80u64;
    for seed in width_seeds.clone() {
        let codecs = codec_names();
        let spec = single_source_spec(&CODECS, seed);
        let study = generate_design(&spec).unwrap();
        let truth = random_truth(&spec.sources, &codecs, seed);
        let batches = simulate(&study, &truth, &[ObserverProfile::thurstonian(0.0, 4)], seed).unwrap();
        let data = ResponseSet::from_batches(&study.design, &batches);
        let cfg = FitConfig::default();
        let full = fit(&data, &cfg).unwrap();
        let bcfg = BootstrapConfig { replicates: 1000, seed, ..Default::default() };
        let band = bootstrap(&data, &full, &study.design, &cfg, &bcfg).unwrap();
        let mut all_within = true;
        for p in band.curves.iter().flat_map(|c| &c.points) {
            let limit = 0.1 + 0.05 * p.jnd;
            width_points += 1;
            width_ok += (p.width() <= limit) as usize;
            all_within &= p.width() <= limit;
            worst_excess = worst_excess.max(p.width() - limit);
        }
        studies_ok += all_within as usize;
    }
    let width_studies = width_seeds.count();
    if width_ok != width_points {
        problems.push(format!("{} of {width_points} points exceed the width limit", width_points - width_ok));
    }

    verdict(
        problems.is_empty(),
        format!(
            "coverage {covered}/{points} = {:.3} (>= 0.90); width within 0.1 + 0.05x at {width_ok}/{width_points} points, \
             {studies_ok}/{width_studies} studies entirely (worst margin {worst_excess:+.3}); problems: {:?}",
            coverage,
            problems.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

const PUBLISHED_ENV: &str = "JND_KIT_PUBLISHED_DIR";

fn published_dir() -> Option<PathBuf> {
    std::env::var_os(PUBLISHED_ENV).map(PathBuf::from).filter(|p| p.join("stimuli.csv").exists())
}

/// Decision of GMSD (x) versus VMAF-neg (y) on the Overall scheme, with
/// SRCCs against the published subjective scores.
fn published_gmsd_vmaf_decision(dir: &Path) -> Result<i8, String> {
    let design = load_design(&DesignFiles { stimuli: dir.join("stimuli.csv"), questions: dir.join("questions.csv") })
        .map_err(|e| e.to_string())?;
    let metrics = load_metric_scores(&dir.join("metrics.csv"), &design).map_err(|e| e.to_string())?;
    let jnd = load_jnd_scores(&dir.join("jnd.csv"), &design).map_err(|e| e.to_string())?;
    let find = |name: &str| {
        metrics
            .metrics()
            .iter()
            .find(|m| m.eq_ignore_ascii_case(name))
            .cloned()
            .ok_or_else(|| format!("metric {name} missing"))
    };
    let (g, v) = (find("gmsd")?, find("vmaf_neg")?);
    let cols = [metrics.scores(&g).unwrap(), metrics.scores(&v).unwrap()];
    let m = mrr_matrix(&[g, v], &cols, jnd.values(), 0.05).map_err(|e| e.to_string())?;
    Ok(m.decisions[0][1])
}

fn criterion_8() -> Outcome {
    let Some(dir) = published_dir() else {
        return Outcome::Skip(format!(
            "set {PUBLISHED_ENV} to a directory holding the published data in this crate's CSV layout"
        ));
    };
    let run = || -> Result<(bool, String), String> {
        let design =
            load_design(&DesignFiles { stimuli: dir.join("stimuli.csv"), questions: dir.join("questions.csv") })
                .map_err(|e| e.to_string())?;
        let batches = load_responses(&dir.join("responses.csv"), &design).map_err(|e| e.to_string())?;
        let fit_cfg = FitConfig::default();
        let reports =
            screen_all(&batches, &design, &ScreeningConfig::default(), &fit_cfg).map_err(|e| e.to_string())?;
        let mut ok = true;
        let mut notes = Vec::new();
        for r in &reports {
            let removed = r.batches.iter().filter(|b| b.label != BatchLabel::Inlier).count();
            let expected = match r.mode {
                Mode::Ptc => 51,
                Mode::Btc => 46,
            };
            ok &= removed.abs_diff(expected) <= 3;
            notes.push(format!("{} screened {removed}/{} (published {expected})", r.mode.as_str(), r.batches.len()));
        }
        let inliers: Vec<_> = {
            let keep: std::collections::HashSet<&str> = reports.iter().flat_map(|r| r.inlier_ids()).collect();
            batches.iter().filter(|b| keep.contains(b.batch_id.as_str())).collect()
        };
        let model = fit(&ResponseSet::from_batches(&design, inliers), &fit_cfg).map_err(|e| e.to_string())?;
        let ours = truth_jnd(&design, &model).map_err(|e| e.to_string())?;
        let published = load_jnd_scores(&dir.join("jnd.csv"), &design).map_err(|e| e.to_string())?;
        let mut groups: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for (k, &idx) in ours.items().iter().enumerate() {
            let s = design.stimulus(idx);
            let e = groups.entry((s.source_id.clone(), s.codec_id.clone())).or_default();
            e.0.push(ours.values()[k]);
            e.1.push(published.values()[k]);
        }
        let worst = groups.values().filter_map(|(a, b)| srcc(a, b).ok()).fold(f64::INFINITY, f64::min);
        ok &= worst >= 0.98;
        notes.push(format!("min per source/codec SRCC {worst:.3}"));
        if dir.join("metrics.csv").exists() {
            let metrics = load_metric_scores(&dir.join("metrics.csv"), &design).map_err(|e| e.to_string())?;
            let cfg = EvalConfig { groupings: vec![Grouping::Overall], ..Default::default() };
            let report = evaluate(&design, &metrics, &published, &cfg).map_err(|e| e.to_string())?;
            let table2: &[(&str, f64, f64)] = &[("cvvdp", 0.960, 0.961)];
            for (name, p, s) in table2 {
                if let Some(row) = report.summaries.iter().find(|r| r.metric.eq_ignore_ascii_case(name)) {
                    let hit = (row.mean_plcc - p).abs() <= 0.02 && (row.mean_srcc - s).abs() <= 0.02;
                    ok &= hit;
                    notes.push(format!("{name} overall {:.3}/{:.3} (published {p}/{s})", row.mean_plcc, row.mean_srcc));
                }
            }
        }
        Ok((ok, notes.join("; ")))
    };
    match run() {
        Ok((ok, d)) => verdict(ok, d),
        Err(e) => Outcome::Fail(e),
    }
}
