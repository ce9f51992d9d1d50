use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dose::{compute_dose_grid, SeedPlan};
use super::dvh::{
    compute_dvh, dose_at_volume, format_decimal_comma, volume_at_dose, DoseAtVolume,
    DoseAtVolumeMode,
};
use crate::error::{Error, Result};
use crate::geometry::{planimetric_volume, voxelize, ContourStack, GridSpec, Structure};

/// Slack between recomputed and printed diff/percent cells: one unit in the
/// last printed place, since the printed percents are truncated, not rounded.
pub const PRINTED_TOLERANCE: f64 = 0.01;

/// One table row: US and MRI+US values with `diff = MRI+US − US` and
/// `percent = 100·diff/US`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedEvaluation {
    pub patient: String,
    pub us: f64,
    pub mri_us: f64,
    pub diff: f64,
    pub percent: f64,
}

impl PairedEvaluation {
    pub fn new(patient: impl Into<String>, us: f64, mri_us: f64) -> Self {
        let diff = mri_us - us;
        PairedEvaluation {
            patient: patient.into(),
            us,
            mri_us,
            diff,
            percent: 100.0 * diff / us,
        }
    }

    /// Whether printed diff and percent agree with the two values within `tol`.
    pub fn consistent_with(&self, printed_diff: f64, printed_percent: f64, tol: f64) -> bool {
        (self.diff - printed_diff).abs() <= tol && (self.percent - printed_percent).abs() <= tol
    }

    /// Row cells with two decimals and a decimal comma, e.g. `["24,12", "23,05", "-1,07", "-4,44"]`.
    pub fn formatted(&self) -> [String; 4] {
        [self.us, self.mri_us, self.diff, self.percent].map(|v| format_decimal_comma(v, 2))
    }
}

/// Contour stacks of one delineation, keyed by structure.
pub type StructureSet = BTreeMap<Structure, ContourStack>;

/// Prostate volume, V160 and D90 under one plan for the US and MRI+US delineations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureComparison {
    pub volume_cc: PairedEvaluation,
    pub v160_pct: PairedEvaluation,
    pub d90_gy: PairedEvaluation,
    pub us_d90: DoseAtVolume,
    pub mri_us_d90: DoseAtVolume,
}

fn prostate(set: &StructureSet, which: &str) -> Result<ContourStack> {
    set.get(&Structure::Prostate)
        .cloned()
        .ok_or_else(|| Error::InvalidParameter(format!("{which} structure set has no prostate")))
}

pub fn compare_structures(
    patient: &str,
    us: &StructureSet,
    fused: &StructureSet,
    plan: &SeedPlan,
    grid: &GridSpec,
    bin_width_gy: f64,
    mode: DoseAtVolumeMode,
) -> Result<StructureComparison> {
    let dose = compute_dose_grid(plan, grid)?;
    let eval = |stack: &ContourStack| -> Result<(f64, f64, DoseAtVolume)> {
        let mask = voxelize(stack, grid)?;
        let dvh = compute_dvh(&dose, &mask, "prostate", bin_width_gy)?;
        Ok((
            planimetric_volume(stack),
            volume_at_dose(&dvh, 160.0).fraction_pct,
            dose_at_volume(&dvh, 90.0, mode)?,
        ))
    };
    let (vu, v160u, d90u) = eval(&prostate(us, "US")?)?;
    let (vf, v160f, d90f) = eval(&prostate(fused, "MRI+US")?)?;
    Ok(StructureComparison {
        volume_cc: PairedEvaluation::new(patient, vu, vf),
        v160_pct: PairedEvaluation::new(patient, v160u, v160f),
        d90_gy: PairedEvaluation::new(patient, d90u.dose_gy, d90f.dose_gy),
        us_d90: d90u,
        mri_us_d90: d90f,
    })
}
