use crate::error::{Error, Result};

/// Between-class variance of a split, kept as an exact fraction
/// `num / den` over integer bin indices (the constant 1/N² is dropped).
#[derive(Debug, Clone, Copy)]
struct Separation {
    num: u128,
    den: u128,
}

impl Separation {
    fn new(n0: u64, s0: u64, total_n: u64, total_s: u64) -> Separation {
        let n1 = total_n - n0;
        if n0 == 0 || n1 == 0 {
            return Separation { num: 0, den: 1 };
        }
        let a = total_n as i128 * s0 as i128 - n0 as i128 * total_s as i128;
        let diff = a.unsigned_abs();
        Separation { num: diff.saturating_mul(diff), den: n0 as u128 * n1 as u128 }
    }

    fn is_zero(&self) -> bool {
        self.num == 0
    }

    fn greater_than(&self, other: &Separation) -> bool {
        match (self.num.checked_mul(other.den), other.num.checked_mul(self.den)) {
            (Some(a), Some(b)) => a > b,
            _ => (self.num as f64 / self.den as f64) > (other.num as f64 / other.den as f64),
        }
    }
}

/// Bin of a score in `[0, 1]` on a `bins`-bin histogram; 1.0 falls in the
/// last bin.
pub fn bin_of(score: f64, bins: usize) -> usize {
    ((score * bins as f64).floor() as usize).min(bins - 1)
}

/// Otsu threshold over a `bins`-bin histogram of `[0, 1]`.
///
/// Returns the lower edge `k / bins` of the first bin of the upper class,
/// choosing the lowest `k` among ties, so a score is below threshold
/// exactly when its bin index is below `k`.
pub fn otsu_threshold(scores: &[f64], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::Config(format!("otsu needs at least 2 bins, got {bins}")));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Domain(format!("score {bad} outside [0, 1]")));
    }
    let first = scores.first().copied();
    if first.is_none() || scores.iter().all(|s| Some(*s) == first) {
        return Err(Error::Degenerate("otsu needs at least two distinct scores".into()));
    }

    let mut hist = vec![0u64; bins];
    for &s in scores {
        hist[bin_of(s, bins)] += 1;
    }
    let total_n: u64 = hist.iter().sum();
    let total_s: u64 = hist.iter().enumerate().map(|(b, &c)| b as u64 * c).sum();

    let mut best_k = None;
    let mut best = Separation { num: 0, den: 1 };
    let (mut n0, mut s0) = (0u64, 0u64);
    for k in 1..bins {
        n0 += hist[k - 1];
        s0 += (k as u64 - 1) * hist[k - 1];
        let sep = Separation::new(n0, s0, total_n, total_s);
        if !sep.is_zero() && (best_k.is_none() || sep.greater_than(&best)) {
            best = sep;
            best_k = Some(k);
        }
    }
    match best_k {
        Some(k) => Ok(k as f64 / bins as f64),
        None => Err(Error::Degenerate("all scores fall into one histogram bin".into())),
    }
}
