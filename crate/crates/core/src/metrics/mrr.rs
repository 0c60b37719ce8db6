use serde::{Deserialize, Serialize};

use super::correlation::srcc;
use crate::error::{Error, Result};
use crate::scale::normal_cdf;

/// Correlations entering a test of two dependent correlations sharing the
/// variable `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrrInputs {
    pub r_xz: f64,
    pub r_yz: f64,
    pub r_xy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MrrResult {
    pub z: f64,
    pub p_value: f64,
    /// `+1` when `r_xz` is significantly larger, `-1` when `r_yz` is, else 0.
    pub decision: i8,
}

/// Meng-Rosenthal-Rubin z-test for `r_xz` versus `r_yz`.
///
/// With `cap_f` the collinearity term `f` is limited to 1.
pub fn mrr_test(inputs: MrrInputs, alpha: f64, cap_f: bool) -> Result<MrrResult> {
    let MrrInputs { r_xz, r_yz, r_xy, n } = inputs;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("significance level {alpha} outside (0, 1)")));
    }
    if n < 4 {
        return Err(Error::Domain(format!("MRR test needs n >= 4, got {n}")));
    }
    for (name, r) in [("r_xz", r_xz), ("r_yz", r_yz), ("r_xy", r_xy)] {
        if !r.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        if r.abs() > 1.0 {
            return Err(Error::Domain(format!("{name} = {r} outside [-1, 1]")));
        }
    }
    if r_xz.abs() == 1.0 || r_yz.abs() == 1.0 {
        return Err(Error::Domain("correlation with the target of magnitude 1".into()));
    }
    let z1 = r_xz.atanh();
    let z2 = r_yz.atanh();
    if z1 == z2 {
        return Ok(MrrResult { z: 0.0, p_value: 1.0, decision: 0 });
    }
    if r_xy == 1.0 {
        return Err(Error::Degenerate("identical predictors with different correlations".into()));
    }
    let r2 = (r_xz * r_xz + r_yz * r_yz) / 2.0;
    let mut f = (1.0 - r_xy) / (2.0 * (1.0 - r2));
    if cap_f {
        f = f.min(1.0);
    }
    let h = (1.0 - f * r2) / (1.0 - r2);
    let z = (z1 - z2) * ((n as f64 - 3.0) / (2.0 * (1.0 - r_xy) * h)).sqrt();
    if !z.is_finite() {
        return Err(Error::NonFinite("MRR statistic".into()));
    }
    let p_value = 2.0 * normal_cdf(-z.abs());
    let decision = if p_value < alpha { z.signum() as i8 } else { 0 };
    Ok(MrrResult { z, p_value, decision })
}

/// Pairwise significance matrix over metrics, from rank correlations with
/// the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrrMatrix {
    pub metrics: Vec<String>,
    /// `decisions[i][j]` is `+1` when metric `i` is significantly better.
    pub decisions: Vec<Vec<i8>>,
    pub z: Vec<Vec<f64>>,
}

/// Compares every pair of metric columns against `target`.
///
/// Correlations with the target enter as magnitudes so that metrics of
/// either polarity compete on equal footing; the inter-metric correlation
/// is oriented accordingly.
pub fn mrr_matrix(metrics: &[String], columns: &[&[f64]], target: &[f64], alpha: f64) -> Result<MrrMatrix> {
    let m = columns.len();
    if metrics.len() != m {
        return Err(Error::Domain(format!("{} names for {m} metric columns", metrics.len())));
    }
    let with_target = columns.iter().map(|c| srcc(c, target)).collect::<Result<Vec<_>>>()?;
    let mut decisions = vec![vec![0i8; m]; m];
    let mut z = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let orient = with_target[i].signum() * with_target[j].signum();
            let r_xy = srcc(columns[i], columns[j])? * if orient == 0.0 { 1.0 } else { orient };
            let res = mrr_test(
                MrrInputs { r_xz: with_target[i].abs(), r_yz: with_target[j].abs(), r_xy, n: target.len() },
                alpha,
                true,
            )?;
            decisions[i][j] = res.decision;
            decisions[j][i] = -res.decision;
            z[i][j] = res.z;
            z[j][i] = -res.z;
        }
    }
    Ok(MrrMatrix { metrics: metrics.to_vec(), decisions, z })
}
