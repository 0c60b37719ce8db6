#![allow(dead_code)]

use std::collections::BTreeMap;

use jnd_core::scale::{Boosting, BoostingTransfer, CodecCurve, FitStats, ScaleModel, SourceModel, JND_UNIT_Z};
use jnd_core::simulate::StudyDesignSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CODECS: [&str; 6] = ["avif", "jpeg", "jpeg2000", "jpeg_ai", "jpegxl", "vvc"];

/// Truth with α ∈ [1, 4], β ∈ [0.5, 3] per codec and γ = (2.0, 0.3).
pub fn random_truth(sources: &[String], codecs: &[String], seed: u64) -> ScaleModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for s in sources {
        let curves = codecs
            .iter()
            .map(|c| (c.clone(), CodecCurve { alpha: rng.random_range(1.0..4.0), beta: rng.random_range(0.5..3.0) }))
            .collect();
        out.insert(
            s.clone(),
            SourceModel {
                codecs: curves,
                boosting: BoostingTransfer::Shared(Boosting { gamma1: 2.0, gamma2: 0.3 }),
                stats: FitStats::default(),
            },
        );
    }
    ScaleModel { jnd_unit_z: JND_UNIT_Z, sources: out }
}

/// One source, every codec in same-codec triplets, default response counts.
pub fn single_source_spec(codecs: &[&str], seed: u64) -> StudyDesignSpec {
    StudyDesignSpec {
        sources: vec!["src01".into()],
        codecs: codecs.iter().map(|c| c.to_string()).collect(),
        same_codec_codecs: None,
        seed,
        ..Default::default()
    }
}

/// Largest |plain JND difference| over `points` bitrates in [0.3, 1.65].
pub fn sup_norm_error(a: &ScaleModel, b: &ScaleModel, source: &str, codec: &str, points: usize) -> f64 {
    (0..points)
        .map(|i| {
            let r = 0.3 + 1.35 * i as f64 / (points - 1) as f64;
            (a.jnd_at(source, codec, r).unwrap() - b.jnd_at(source, codec, r).unwrap()).abs()
        })
        .fold(0.0, f64::max)
}

/// Like [`random_truth`], but redraws each codec until its most distorted
/// ladder point (0.3 bpp) sits at least `min_jnd` JND above the reference,
/// so that trap questions are visible as the study design presupposes.
pub fn visible_truth(sources: &[String], codecs: &[String], seed: u64, min_jnd: f64) -> ScaleModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = random_truth(sources, codecs, seed);
    for sm in model.sources.values_mut() {
        for curve in sm.codecs.values_mut() {
            while curve.jnd(0.3) < min_jnd {
                *curve = CodecCurve { alpha: rng.random_range(1.0..4.0), beta: rng.random_range(0.5..3.0) };
            }
        }
    }
    model
}
