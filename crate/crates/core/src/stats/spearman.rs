use serde::{Deserialize, Serialize};

use super::average_ranks;
use crate::error::{Error, Result};

/// Critical |ρ| values; only n = 8 is tabulated.
pub fn spearman_threshold(n: usize, alpha: f64) -> Option<f64> {
    match (n, alpha) {
        (8, a) if a == 0.05 => Some(0.738),
        (8, a) if a == 0.01 => Some(0.88),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub n: usize,
    pub ties: bool,
    pub threshold_0_05: Option<f64>,
    pub threshold_0_01: Option<f64>,
    /// `|ρ|` strictly above the tabulated threshold; `None` when not tabulated.
    pub significant_0_05: Option<bool>,
    pub significant_0_01: Option<bool>,
}

pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidParameter(format!(
            "Spearman needs at least 3 pairs, got {n}"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "Spearman inputs must be finite".into(),
        ));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let distinct = |r: &[f64]| r.iter().all(|v| v.fract() == 0.0);
    let ties = !(distinct(&rx) && distinct(&ry));
    let rho = if ties {
        pearson(&rx, &ry)
    } else {
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
        let nf = n as f64;
        1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0))
    };
    let rho = rho.clamp(-1.0, 1.0);
    let t05 = spearman_threshold(n, 0.05);
    let t01 = spearman_threshold(n, 0.01);
    Ok(SpearmanResult {
        rho,
        n,
        ties,
        threshold_0_05: t05,
        threshold_0_01: t01,
        significant_0_05: t05.map(|t| rho.abs() > t),
        significant_0_01: t01.map(|t| rho.abs() > t),
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}
