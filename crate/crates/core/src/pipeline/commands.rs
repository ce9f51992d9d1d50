use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::case::LoadedCase;
use super::{EvaluateConfig, OutputLayout, PipelineConfig};
use crate::dosimetry::{
    check_constraints, compute_dose_grid, compute_dvh, dose_at_volume, volume_at_dose,
    ConstraintReport, DvhCurve, PairedEvaluation, StructureComparison, StructureSet,
};
use crate::error::{Error, Result};
use crate::fusion::{
    composite_slice, map_mri_contours_to_trus, CompositeOptions, Image2D, MAX_FAILED_FRACTION,
};
use crate::geometry::{
    planimetric_volume, voxelize, ContourStack, GridSpec, Point3, Structure, SurfaceModel,
};
use crate::registration::{
    register, residual_surface_distance, target_registration_error, DistanceStats, TransferFunction,
};
use crate::stats::{
    spearman_rho, wilcoxon_from_diffs, PairedTable, SpearmanResult, TableCheck, WilcoxonResult,
};

/// Dose grid covering every stack, snapped to multiples of the spacing so a
/// structure sees the same voxel centres whatever else is being covered.
pub(crate) fn dose_grid_for<'a>(
    stacks: impl Iterator<Item = &'a ContourStack>,
    cfg: &EvaluateConfig,
) -> Result<GridSpec> {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = -lo;
    for s in stacks {
        let (a, b) = s.bounds();
        lo = lo.inf(&a);
        hi = hi.sup(&b);
    }
    if !lo.x.is_finite() {
        return Err(Error::EmptyInput("no structures to cover with a dose grid"));
    }
    let h = cfg.dose_spacing_mm;
    let m = cfg.dose_margin_mm;
    let lo = (lo - nalgebra::Vector3::repeat(m)).map(|v| (v / h).floor() * h);
    let hi = (hi + nalgebra::Vector3::repeat(m)).map(|v| (v / h).ceil() * h);
    GridSpec::covering(lo, hi, h)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegisterReport {
    pub patient: String,
    /// Serialized transfer function, relative to the output root.
    pub transfer_file: String,
    pub source_points: usize,
    pub target_points: usize,
    pub rigid_converged: bool,
    pub rigid_iterations: usize,
    pub elastic_converged: bool,
    pub iterations_per_level: Vec<usize>,
    pub final_cost: f64,
    pub residual_rigid: DistanceStats,
    pub residual: DistanceStats,
    pub tre_rigid: Option<DistanceStats>,
    pub tre: Option<DistanceStats>,
}

impl RegisterReport {
    pub fn converged(&self) -> bool {
        self.rigid_converged && self.elastic_converged
    }
}

/// Registers the US prostate surface onto the MRI prostate surface and
/// writes `reports/<patient>_transfer.json` and `reports/<patient>_register.json`.
pub fn cmd_register(
    case: &LoadedCase,
    cfg: &PipelineConfig,
    out: &OutputLayout,
) -> Result<(TransferFunction, RegisterReport)> {
    let patient = &case.manifest.patient;
    let source = SurfaceModel::from_contours(&case.us[&Structure::Prostate]);
    let target = SurfaceModel::from_contours(&case.mri_structures[&Structure::Prostate]);
    let (rigid, result) = register(&source, &target, &cfg.registration)?;
    let rigid_f = TransferFunction::rigid_only(rigid.transform.clone());
    let (tre_rigid, tre) = match &case.landmarks {
        Some(lm) => {
            let (s, t) = lm.points()?;
            (
                Some(target_registration_error(&rigid_f, &s, &t)?),
                Some(target_registration_error(&result.transfer, &s, &t)?),
            )
        }
        None => (None, None),
    };
    let name = format!("{patient}_transfer");
    OutputLayout::ensure(&out.reports())?;
    result
        .transfer
        .write_json(out.reports().join(format!("{name}.json")))?;
    let report = RegisterReport {
        patient: patient.clone(),
        transfer_file: format!("reports/{name}.json"),
        source_points: source.len(),
        target_points: target.len(),
        rigid_converged: rigid.converged,
        rigid_iterations: rigid.iterations,
        elastic_converged: result.converged,
        iterations_per_level: result.iterations_per_level.clone(),
        final_cost: result.final_cost,
        residual_rigid: residual_surface_distance(&rigid_f, &source, &target)?,
        residual: residual_surface_distance(&result.transfer, &source, &target)?,
        tre_rigid,
        tre,
    };
    out.write_report(&format!("{patient}_register"), &report)?;
    Ok((result.transfer, report))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FusedImage {
    pub file: String,
    pub slice: usize,
    pub cursor: [usize; 2],
    pub out_of_bounds: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FuseReport {
    pub patient: String,
    pub images: Vec<FusedImage>,
    pub out_of_bounds_total: usize,
}

fn trus_slice(case: &LoadedCase, k: usize) -> Result<Image2D> {
    let [w, h, d] = case.trus.grid.dims;
    if k >= d {
        return Err(Error::OutOfBounds(format!("TRUS slice {k} of {d}")));
    }
    Image2D::new(w, h, case.trus.values[k * w * h..(k + 1) * w * h].to_vec())
}

/// Writes `composite/<patient>_s<slice>_c<cursor>.pgm` for every requested
/// slice and cursor, then `reports/<patient>_fuse.json`.
pub fn cmd_fuse(
    case: &LoadedCase,
    f: &TransferFunction,
    cfg: &PipelineConfig,
    out: &OutputLayout,
) -> Result<FuseReport> {
    let patient = &case.manifest.patient;
    let geom = &case.manifest.slice_geometry;
    let fc = &cfg.fusion;
    let slices: Vec<usize> = if fc.slices.is_empty() {
        (0..case.trus.grid.dims[2]).collect()
    } else {
        fc.slices.clone()
    };
    let cursors = if fc.cursors.is_empty() {
        vec![[geom.width / 2, geom.height / 2]]
    } else {
        fc.cursors.clone()
    };
    let opts = CompositeOptions {
        layout: fc.layout,
        fill: fc.fill,
    };
    let dir = out.composite();
    OutputLayout::ensure(&dir)?;
    let mut images = Vec::new();
    for &k in &slices {
        let trus = trus_slice(case, k)?;
        for (i, &cursor) in cursors.iter().enumerate() {
            let img = composite_slice(&trus, geom, k as i64, &case.mri, f, cursor, &opts)?;
            let stem = format!("{patient}_s{k:03}_c{i}");
            img.write(&dir, &stem)?;
            images.push(FusedImage {
                file: format!("composite/{stem}.pgm"),
                slice: k,
                cursor,
                out_of_bounds: img.out_of_bounds,
            });
        }
    }
    let report = FuseReport {
        patient: patient.clone(),
        out_of_bounds_total: images.iter().map(|i| i.out_of_bounds).sum(),
        images,
    };
    out.write_report(&format!("{patient}_fuse"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MappingSummary {
    pub mapped_slices: usize,
    pub failed_vertices: usize,
    pub total_vertices: usize,
    pub rejected_slices: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

fn check(name: &str, ok: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.into(),
        ok,
        detail,
    }
}

/// Output of the evaluation protocol for one case.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CaseReport {
    pub patient: String,
    pub registration: Option<RegisterReport>,
    pub mapping: Option<MappingSummary>,
    pub dose_grid: Option<GridSpec>,
    pub dose_max_gy: Option<f64>,
    pub comparison: Option<StructureComparison>,
    pub constraints_us: Option<ConstraintReport>,
    pub constraints_mri_us: Option<ConstraintReport>,
    pub dvh_files: Vec<String>,
    pub checks: Vec<CheckResult>,
    /// Steps that failed; the report is partial when non-empty.
    pub failures: Vec<String>,
}

impl CaseReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.checks.iter().all(|c| c.ok)
    }
}

fn dvh_checks(name: &str, dvh: &DvhCurve) -> CheckResult {
    let s = &dvh.samples;
    let monotone = s.windows(2).all(|w| w[1].1 <= w[0].1);
    let ends = s.first().map(|x| x.1) == Some(100.0) && s.last().map(|x| x.1) == Some(0.0);
    check(
        &format!("{name} DVH monotone from 100% to 0%"),
        monotone && ends,
        format!("{} samples", s.len()),
    )
}

fn paired_check(label: &str, row: &PairedEvaluation) -> CheckResult {
    let again = PairedEvaluation::new(row.patient.clone(), row.us, row.mri_us);
    check(
        &format!("{label} diff/percent consistent"),
        again.consistent_with(row.diff, row.percent, 0.0),
        format!("diff {} percent {}", row.diff, row.percent),
    )
}

/// The evaluation protocol: maps the MRI prostate into the TRUS frame,
/// computes the dose once, and compares US against MRI+US prostate DVHs.
/// Urethra and rectum come from the US delineation for both sets.
pub fn cmd_evaluate(
    case: &LoadedCase,
    f: &TransferFunction,
    registration: Option<RegisterReport>,
    cfg: &PipelineConfig,
    out: &OutputLayout,
) -> Result<CaseReport> {
    let patient = case.manifest.patient.clone();
    let ec = &cfg.evaluate;
    let mut report = CaseReport {
        patient: patient.clone(),
        registration,
        mapping: None,
        dose_grid: None,
        dose_max_gy: None,
        comparison: None,
        constraints_us: None,
        constraints_mri_us: None,
        dvh_files: Vec::new(),
        checks: Vec::new(),
        failures: Vec::new(),
    };

    let mri_prostate = &case.mri_structures[&Structure::Prostate];
    let total_vertices: usize = mri_prostate.contours.iter().map(|c| c.vertices.len()).sum();
    let fused_prostate =
        match map_mri_contours_to_trus(mri_prostate, f, &case.manifest.slice_geometry) {
            Ok(m) => {
                let failed = m.failed_vertices.len();
                report.checks.push(check(
                    "mapped vertex failures within limit",
                    failed as f64 <= MAX_FAILED_FRACTION * total_vertices as f64,
                    format!("{failed} of {total_vertices}"),
                ));
                report.mapping = Some(MappingSummary {
                    mapped_slices: m.stack.contours.len(),
                    failed_vertices: failed,
                    total_vertices,
                    rejected_slices: m.rejected_slices,
                });
                Some(m.stack)
            }
            Err(e) => {
                report.failures.push(format!("contour mapping: {e}"));
                None
            }
        };
    let mut fused: Option<StructureSet> = fused_prostate.map(|p| {
        let mut set = case.us.clone();
        set.insert(Structure::Prostate, p);
        set
    });

    let stacks = case
        .us
        .values()
        .chain(fused.iter().flat_map(|s| s.get(&Structure::Prostate)));
    let grid = dose_grid_for(stacks, ec)?;
    let dose = compute_dose_grid(&case.plan, &grid)?;
    report.dose_max_gy = Some(dose.max());
    report.dose_grid = Some(grid.clone());

    let dvh_dir = out.dvh();
    OutputLayout::ensure(&dvh_dir)?;
    let curves = |set_name: &str,
                  set: &StructureSet,
                  report: &mut CaseReport|
     -> Vec<(Structure, DvhCurve)> {
        let mut got = Vec::new();
        for (structure, stack) in set {
            let label = format!("{set_name} {structure}");
            let curve = voxelize(stack, &grid).and_then(|mask| {
                compute_dvh(&dose, &mask, &structure.to_string(), ec.bin_width_gy)
            });
            match curve {
                Ok(dvh) => {
                    let file = format!("dvh/{patient}_{set_name}_{structure}.csv");
                    if let Err(e) = dvh.write_csv(out.root.join(&file)) {
                        report.failures.push(format!("{label} DVH file: {e}"));
                    } else {
                        report.dvh_files.push(file);
                    }
                    report.checks.push(dvh_checks(&label, &dvh));
                    got.push((structure.clone(), dvh));
                }
                Err(e) => report.failures.push(format!("{label} DVH: {e}")),
            }
        }
        got
    };
    let us_curves = curves("us", &case.us, &mut report);
    let fused_curves = match fused.take() {
        Some(set) => {
            // urethra and rectum are shared; only the prostate differs
            let only_prostate: StructureSet = set
                .into_iter()
                .filter(|(s, _)| *s == Structure::Prostate)
                .collect();
            let c = curves("mri_us", &only_prostate, &mut report);
            fused = Some(only_prostate);
            c
        }
        None => Vec::new(),
    };
    let find = |v: &[(Structure, DvhCurve)], s: Structure| {
        v.iter().find(|(k, _)| *k == s).map(|(_, d)| d.clone())
    };
    let us_p = find(&us_curves, Structure::Prostate);
    let urethra = find(&us_curves, Structure::Urethra);
    let rectum = find(&us_curves, Structure::Rectum);
    let fused_p = find(&fused_curves, Structure::Prostate);

    if let Some(us_p) = &us_p {
        match check_constraints(Some(us_p), urethra.as_ref(), rectum.as_ref()) {
            Ok(r) => report.constraints_us = Some(r),
            Err(e) => report.failures.push(format!("US constraints: {e}")),
        }
    }
    if let Some(fp) = &fused_p {
        match check_constraints(Some(fp), urethra.as_ref(), rectum.as_ref()) {
            Ok(r) => report.constraints_mri_us = Some(r),
            Err(e) => report.failures.push(format!("MRI+US constraints: {e}")),
        }
    }

    if let (Some(us_p), Some(fp), Some(fused)) = (&us_p, &fused_p, &fused) {
        let us_stack = &case.us[&Structure::Prostate];
        let fused_stack = &fused[&Structure::Prostate];
        let d90 = |d: &DvhCurve| dose_at_volume(d, 90.0, ec.d90_mode);
        match (d90(us_p), d90(fp)) {
            (Ok(du), Ok(df)) => {
                let cmp = StructureComparison {
                    volume_cc: PairedEvaluation::new(
                        &patient,
                        planimetric_volume(us_stack),
                        planimetric_volume(fused_stack),
                    ),
                    v160_pct: PairedEvaluation::new(
                        &patient,
                        volume_at_dose(us_p, 160.0).fraction_pct,
                        volume_at_dose(fp, 160.0).fraction_pct,
                    ),
                    d90_gy: PairedEvaluation::new(&patient, du.dose_gy, df.dose_gy),
                    us_d90: du,
                    mri_us_d90: df,
                };
                for (label, row) in [
                    ("volume", &cmp.volume_cc),
                    ("V160", &cmp.v160_pct),
                    ("D90", &cmp.d90_gy),
                ] {
                    report.checks.push(paired_check(label, row));
                }
                for (label, stack, dvh) in [("US", us_stack, us_p), ("MRI+US", fused_stack, fp)] {
                    let plan = planimetric_volume(stack);
                    let vox = dvh.total_cc();
                    report.checks.push(check(
                        &format!("{label} prostate voxel volume near planimetric volume"),
                        (vox - plan).abs() <= 0.1 * plan,
                        format!("voxels {vox:.3} cc, planimetric {plan:.3} cc"),
                    ));
                }
                report.comparison = Some(cmp);
            }
            (a, b) => {
                for e in [a.err(), b.err()].into_iter().flatten() {
                    report.failures.push(format!("D90: {e}"));
                }
            }
        }
    }

    out.write_report(&format!("{patient}_evaluate"), &report)?;
    Ok(report)
}

/// A column of one of the tables given to `cmd_stats`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnRef {
    /// Position of the table on the command line.
    pub table: usize,
    pub column: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableStats {
    pub table: String,
    pub rows: usize,
    /// Which differences the test ran on: `diff` (printed) or `mri_us - us`.
    pub tested: String,
    pub wilcoxon: WilcoxonResult,
    pub row_checks: Vec<TableCheck>,
    pub summary_checks: Vec<TableCheck>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpearmanReport {
    pub x: ColumnRef,
    pub y: ColumnRef,
    pub result: SpearmanResult,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StatsReport {
    pub tables: Vec<TableStats>,
    pub spearman: Option<SpearmanReport>,
}

fn table_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Wilcoxon per table (on the printed `diff` column when present) and
/// Spearman between two columns; writes `reports/stats.json`.
pub fn cmd_stats(
    tables: &[PathBuf],
    cfg: &PipelineConfig,
    out: &OutputLayout,
) -> Result<StatsReport> {
    if tables.is_empty() {
        return Err(Error::EmptyInput("stats needs at least one table"));
    }
    let loaded: Vec<PairedTable> = tables
        .iter()
        .map(PairedTable::read)
        .collect::<Result<_>>()?;
    let mut report = StatsReport {
        tables: Vec::new(),
        spearman: None,
    };
    for (path, t) in tables.iter().zip(&loaded) {
        let (tested, diffs) = match t.column("diff") {
            Some(d) => ("diff".to_string(), d),
            None => (
                "mri_us - us".to_string(),
                t.rows.iter().map(|r| r.computed_diff()).collect(),
            ),
        };
        report.tables.push(TableStats {
            table: table_name(path),
            rows: t.rows.len(),
            tested,
            wilcoxon: wilcoxon_from_diffs(&diffs, cfg.stats.zero_method)?,
            row_checks: t.check_rows(crate::dosimetry::PRINTED_TOLERANCE),
            summary_checks: t.check_summary(crate::dosimetry::PRINTED_TOLERANCE),
        });
    }
    let pair = cfg.stats.spearman.clone().or_else(|| {
        (loaded.len() >= 2).then(|| {
            [
                ColumnRef {
                    table: 0,
                    column: "diff".into(),
                },
                ColumnRef {
                    table: 1,
                    column: "percent".into(),
                },
            ]
        })
    });
    if let Some([x, y]) = pair {
        let column = |c: &ColumnRef| -> Result<Vec<f64>> {
            loaded
                .get(c.table)
                .ok_or_else(|| Error::InvalidParameter(format!("no table number {}", c.table)))?
                .column(&c.column)
                .ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "table {} has no complete column {}",
                        c.table, c.column
                    ))
                })
        };
        let result = spearman_rho(&column(&x)?, &column(&y)?)?;
        report.spearman = Some(SpearmanReport { x, y, result });
    }
    out.write_report("stats", &report)?;
    Ok(report)
}
