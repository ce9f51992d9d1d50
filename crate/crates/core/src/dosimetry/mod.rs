//! Point-source dose on a voxel grid, dose-volume histograms, clinical
//! constraints and paired US vs MRI+US comparisons.

mod compare;
mod constraints;
mod dose;
mod dvh;
mod source;

pub use compare::{
    compare_structures, PairedEvaluation, StructureComparison, StructureSet, PRINTED_TOLERANCE,
};
pub use constraints::{
    check_constraints, constraint_metrics, evaluate_constraints, ConstraintMetrics,
    ConstraintReport, ConstraintResult, ConstraintStatus, PROSTATE_D90_MAX_GY, PROSTATE_D90_MIN_GY,
    RECTUM_V160_MAX_CC, RECTUM_V80_MAX_PCT, URETHRA_V240_MAX_PCT,
};
pub use dose::{compute_dose_grid, dose_at, dose_rate_at, DoseGrid, Seed, SeedPlan};
pub use dvh::{
    compute_dvh, dose_at_volume, format_decimal_comma, format_dose_with_fraction, volume_at_dose,
    DoseAtVolume, DoseAtVolumeMode, DvhCurve, VolumeAtDose, DEFAULT_BIN_WIDTH_GY,
};
pub use source::{
    default_radial_dose, RadialTable, SourceModel, DEFAULT_LAMBDA, DEFAULT_R_MIN_MM,
    I125_HALF_LIFE_DAYS, REFERENCE_DISTANCE_MM,
};
