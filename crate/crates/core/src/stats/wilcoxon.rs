use serde::{Deserialize, Serialize};

use super::{average_ranks, same};
use crate::error::{Error, Result};

/// Largest number of non-zero differences handled by the exact distribution.
pub const MAX_EXACT_N: usize = 100;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroMethod {
    /// Discard zero differences before ranking.
    #[default]
    Drop,
    /// Rank zeros with the rest, then discard their ranks.
    Pratt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub n_total: usize,
    pub n_effective: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    pub w: f64,
    /// Exact two-sided p-value.
    pub p_value: f64,
    pub significant_at_0_05: bool,
}

/// Test on the differences `b − a` of `pairs = (a, b)`.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)], zeros: ZeroMethod) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| b - a).collect();
    wilcoxon_from_diffs(&diffs, zeros)
}

pub fn wilcoxon_from_diffs(diffs: &[f64], zeros: ZeroMethod) -> Result<WilcoxonResult> {
    if diffs.is_empty() {
        return Err(Error::EmptyInput("Wilcoxon test needs at least one pair"));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidParameter("differences must be finite".into()));
    }
    let is_zero = |d: f64| same(d, 0.0);
    let (ranked, keep): (Vec<f64>, Vec<bool>) = match zeros {
        ZeroMethod::Drop => {
            let nz: Vec<f64> = diffs.iter().copied().filter(|&d| !is_zero(d)).collect();
            let n = nz.len();
            (nz, vec![true; n])
        }
        ZeroMethod::Pratt => (diffs.to_vec(), diffs.iter().map(|&d| !is_zero(d)).collect()),
    };
    let abs: Vec<f64> = ranked.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let mut w_plus = 0.0;
    let mut w_minus = 0.0;
    let mut used = Vec::new();
    for ((d, r), k) in ranked.iter().zip(&ranks).zip(&keep) {
        if !k {
            continue;
        }
        used.push(*r);
        if *d > 0.0 {
            w_plus += r;
        } else {
            w_minus += r;
        }
    }
    let n_eff = used.len();
    if n_eff == 0 {
        return Ok(WilcoxonResult {
            n_total: diffs.len(),
            n_effective: 0,
            w_plus: 0.0,
            w_minus: 0.0,
            w: 0.0,
            p_value: 1.0,
            significant_at_0_05: false,
        });
    }
    if n_eff > MAX_EXACT_N {
        return Err(Error::InvalidParameter(format!(
            "exact Wilcoxon distribution limited to {MAX_EXACT_N} differences, got {n_eff}"
        )));
    }
    let w = w_plus.min(w_minus);
    let p_value = (2.0 * lower_tail(&used, w)).min(1.0);
    Ok(WilcoxonResult {
        n_total: diffs.len(),
        n_effective: n_eff,
        w_plus,
        w_minus,
        w,
        p_value,
        significant_at_0_05: p_value <= 0.05,
    })
}

/// P(W⁺ ≤ w) under the null, counting sign assignments over doubled
/// (integer) ranks; equal to a full enumeration of the 2ⁿ sign vectors.
fn lower_tail(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u128; total + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let hits: u128 = counts[..=limit.min(total)].iter().sum();
    hits as f64 / 2f64.powi(ranks.len() as i32)
}
