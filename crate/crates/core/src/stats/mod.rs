//! Paired nonparametric statistics: exact Wilcoxon signed-rank test,
//! Spearman rank correlation, and the paired table format they read.

mod spearman;
mod table;
mod wilcoxon;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use spearman::{spearman_rho, spearman_threshold, SpearmanResult};
pub use table::{PairedRow, PairedTable, SummaryRow, TableCheck};
pub use wilcoxon::{
    wilcoxon_from_diffs, wilcoxon_signed_rank, WilcoxonResult, ZeroMethod, MAX_EXACT_N,
};

/// Values closer than this (relative) share a rank.
pub(crate) const TIE_TOLERANCE: f64 = 1e-9;

/// Average ranks (1-based) of `values`; near-equal values share the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && same(values[order[j]], values[order[i]]) {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

pub(crate) fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no values to summarize"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        n: values.len(),
        mean,
        sd,
    })
}
