//! Thurstone Case V choice model with a JND-calibrated unit.

use statrs::function::erf::erfc;

/// Standard-normal quantile of 0.75: a scale gap of one JND is chosen
/// correctly 75% of the time.
pub const JND_UNIT_Z: f64 = 0.674_489_750_196_081_7;

/// Floor applied to probabilities before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn lower_tail(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal CDF. The upper half is evaluated as a complement of the
/// lower tail so that `normal_cdf(x) + normal_cdf(-x) == 1.0` holds exactly.
pub fn normal_cdf(x: f64) -> f64 {
    if x < 0.0 {
        lower_tail(x)
    } else {
        1.0 - lower_tail(-x)
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Probability that the side with perceived distortion larger by
/// `delta_jnd` is picked as the more distorted one.
pub fn choice_probability(delta_jnd: f64, unit_z: f64) -> f64 {
    normal_cdf(unit_z * delta_jnd)
}

/// `-ln max(Φ(x), floor)` and its derivative in `x` (zero once floored).
pub(crate) fn neg_log_cdf(x: f64) -> (f64, f64) {
    let p = normal_cdf(x);
    if p <= PROBABILITY_FLOOR {
        (-PROBABILITY_FLOOR.ln(), 0.0)
    } else if x > 0.0 {
        (-(-lower_tail(-x)).ln_1p(), -normal_pdf(x) / p)
    } else {
        (-p.ln(), -normal_pdf(x) / p)
    }
}
