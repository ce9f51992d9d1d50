use serde::{Deserialize, Serialize};

use super::dvh::{dose_at_volume, volume_at_dose, DoseAtVolumeMode, DvhCurve};
use crate::error::{Error, Result};

pub const PROSTATE_D90_MIN_GY: f64 = 160.0;
pub const PROSTATE_D90_MAX_GY: f64 = 180.0;
pub const URETHRA_V240_MAX_PCT: f64 = 70.0;
pub const RECTUM_V160_MAX_CC: f64 = 1.3;
pub const RECTUM_V80_MAX_PCT: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintStatus {
    Pass,
    Fail,
    NotEvaluated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintResult {
    pub name: String,
    pub measured: Option<f64>,
    pub unit: String,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub status: ConstraintStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub constraints: Vec<ConstraintResult>,
    pub overall_pass: bool,
}

/// The four quantities the constraints look at; `None` when the structure is missing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintMetrics {
    pub prostate_d90_gy: Option<f64>,
    pub urethra_v240_pct: Option<f64>,
    pub rectum_v160_cc: Option<f64>,
    pub rectum_v80_pct: Option<f64>,
}

fn judge(
    name: &str,
    unit: &str,
    measured: Option<f64>,
    lower: Option<f64>,
    upper: Option<f64>,
) -> ConstraintResult {
    let status = match measured {
        None => ConstraintStatus::NotEvaluated,
        Some(v) if lower.is_some_and(|l| v < l) || upper.is_some_and(|u| v > u) => {
            ConstraintStatus::Fail
        }
        Some(_) => ConstraintStatus::Pass,
    };
    ConstraintResult {
        name: name.into(),
        measured,
        unit: unit.into(),
        lower,
        upper,
        status,
    }
}

pub fn evaluate_constraints(m: &ConstraintMetrics) -> ConstraintReport {
    let constraints = vec![
        judge(
            "prostate D90",
            "Gy",
            m.prostate_d90_gy,
            Some(PROSTATE_D90_MIN_GY),
            Some(PROSTATE_D90_MAX_GY),
        ),
        judge(
            "urethra V240",
            "%",
            m.urethra_v240_pct,
            None,
            Some(URETHRA_V240_MAX_PCT),
        ),
        judge(
            "rectum V160",
            "cc",
            m.rectum_v160_cc,
            None,
            Some(RECTUM_V160_MAX_CC),
        ),
        judge(
            "rectum V80",
            "%",
            m.rectum_v80_pct,
            None,
            Some(RECTUM_V80_MAX_PCT),
        ),
    ];
    let overall_pass = constraints
        .iter()
        .all(|c| c.status == ConstraintStatus::Pass);
    ConstraintReport {
        constraints,
        overall_pass,
    }
}

pub fn constraint_metrics(
    prostate: Option<&DvhCurve>,
    urethra: Option<&DvhCurve>,
    rectum: Option<&DvhCurve>,
) -> Result<ConstraintMetrics> {
    Ok(ConstraintMetrics {
        prostate_d90_gy: prostate
            .map(|d| dose_at_volume(d, 90.0, DoseAtVolumeMode::Exact).map(|r| r.dose_gy))
            .transpose()?,
        urethra_v240_pct: urethra.map(|d| volume_at_dose(d, 240.0).fraction_pct),
        rectum_v160_cc: rectum.map(|d| volume_at_dose(d, 160.0).cc),
        rectum_v80_pct: rectum.map(|d| volume_at_dose(d, 80.0).fraction_pct),
    })
}

pub fn check_constraints(
    prostate: Option<&DvhCurve>,
    urethra: Option<&DvhCurve>,
    rectum: Option<&DvhCurve>,
) -> Result<ConstraintReport> {
    Ok(evaluate_constraints(&constraint_metrics(
        prostate, urethra, rectum,
    )?))
}

impl ConstraintReport {
    pub fn get(&self, name: &str) -> Result<&ConstraintResult> {
        self.constraints
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::InvalidParameter(format!("no constraint named {name}")))
    }
}
