//! A complete synthetic patient case built from the registration phantom:
//! TRUS and MRI volumes, US and MRI contours, a seed plan normalized to a
//! prescribed US D90, and withheld landmarks.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::case::{Landmarks, PatientCase, StructurePaths};
use super::commands::dose_grid_for;
use super::{write_json, EvaluateConfig, OutputLayout};
use crate::dosimetry::{
    compute_dose_grid, compute_dvh, dose_at_volume, Seed, SeedPlan, SourceModel,
};
use crate::error::{Error, Result};
use crate::fusion::{ScalarVolume, SliceGeometry};
use crate::geometry::{
    trace_section, voxelize, Contour, ContourStack, Frame, GridSpec, Point3, Structure,
};
use crate::registration::phantom::{dense_ellipsoid, ellipse_ring};
use crate::registration::{generate_phantom, GroundTruth, PhantomSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomCaseConfig {
    pub amplitude_mm: f64,
    pub slice_step_mm: f64,
    pub pixel_mm: f64,
    pub image_size: usize,
    /// Empty TRUS slices added beyond the organ at each end.
    pub margin_slices: usize,
    pub mri_slice_mm: f64,
    pub mri_voxel_mm: f64,
    pub contour_points: usize,
    pub seed_spacing_mm: f64,
    pub target_d90_gy: f64,
    pub urethra_radius_mm: f64,
    pub rectum_radius_mm: f64,
    /// Gap between the prostate and the rectum wall.
    pub rectum_gap_mm: f64,
}

impl Default for PhantomCaseConfig {
    fn default() -> Self {
        PhantomCaseConfig {
            amplitude_mm: 3.0,
            slice_step_mm: 2.5,
            pixel_mm: 0.5,
            image_size: 192,
            margin_slices: 3,
            mri_slice_mm: 2.0,
            mri_voxel_mm: 1.0,
            contour_points: 64,
            seed_spacing_mm: 10.0,
            target_d90_gy: 170.0,
            urethra_radius_mm: 3.0,
            rectum_radius_mm: 6.0,
            rectum_gap_mm: 6.0,
        }
    }
}

impl PhantomCaseConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("slice_step_mm", self.slice_step_mm),
            ("pixel_mm", self.pixel_mm),
            ("mri_slice_mm", self.mri_slice_mm),
            ("mri_voxel_mm", self.mri_voxel_mm),
            ("seed_spacing_mm", self.seed_spacing_mm),
            ("target_d90_gy", self.target_d90_gy),
            ("urethra_radius_mm", self.urethra_radius_mm),
            ("rectum_radius_mm", self.rectum_radius_mm),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "phantom.{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.amplitude_mm >= 0.0) || !(self.rectum_gap_mm >= 0.0) {
            return Err(Error::InvalidParameter(
                "phantom amplitude and rectum gap must be non-negative".into(),
            ));
        }
        if self.image_size < 8 || self.contour_points < 8 {
            return Err(Error::InvalidParameter(
                "phantom image or contours too coarse".into(),
            ));
        }
        Ok(())
    }
}

/// What `write_phantom_case` produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PhantomCase {
    pub patient: String,
    pub manifest: PathBuf,
    pub truth: GroundTruth,
    /// Air-kerma strength per seed after normalization (U).
    pub seed_strength: f64,
    pub us_d90_gy: f64,
    pub seeds: usize,
}

fn smooth_inside(level: f64) -> f64 {
    1.0 / (1.0 + (40.0 * level).exp())
}

fn circle(center: [f64; 2], r: f64, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let t = std::f64::consts::TAU * k as f64 / n as f64;
            [center[0] + r * t.cos(), center[1] + r * t.sin()]
        })
        .collect()
}

fn stack(
    structure: Structure,
    frame: Frame,
    spacing: f64,
    contours: Vec<Contour>,
) -> Result<ContourStack> {
    ContourStack::new(structure, frame, spacing, contours)
}

fn parallel_volume(grid: GridSpec, f: impl Fn(&Point3) -> f64 + Sync) -> Result<ScalarVolume> {
    let values = (0..grid.len())
        .into_par_iter()
        .map(|i| f(&grid.center_of(i)))
        .collect();
    ScalarVolume::new(grid, values)
}

/// Writes the case for `seed` into `dir` and returns its manifest path.
pub fn write_phantom_case(dir: &Path, seed: u64, cfg: &PhantomCaseConfig) -> Result<PhantomCase> {
    cfg.validate()?;
    let phantom = generate_phantom(&PhantomSpec::new(seed, cfg.amplitude_mm, 0.0))?;
    let truth = phantom.truth.clone();
    let [a, b, c] = truth.semi_axes;
    let patient = format!("phantom-{seed}");

    // TRUS sweep: slices through the organ plus empty margins
    let step = cfg.slice_step_mm;
    let half = ((c - 0.25 * step) / step).floor() as i64;
    let margin = cfg.margin_slices as i64;
    let first = -(half + margin);
    let n_slices = (2 * (half + margin) + 1) as usize;
    let extent = (cfg.image_size - 1) as f64 * cfg.pixel_mm;
    let geom = SliceGeometry {
        du: cfg.pixel_mm,
        dv: cfg.pixel_mm,
        width: cfg.image_size,
        height: cfg.image_size,
        origin: [-0.5 * extent, -0.5 * extent, first as f64 * step],
        slice_step: step,
    };
    let index_of = |k: i64| k - first;

    let urethra_center = [0.0, -0.15 * b];
    let rectum_center = [0.0, -(b + cfg.rectum_gap_mm + cfg.rectum_radius_mm)];
    let mut prostate = Vec::new();
    let mut urethra = Vec::new();
    let mut rectum = Vec::new();
    for k in -half..=half {
        let z = k as f64 * step;
        let n = index_of(k);
        let ring: Vec<[f64; 2]> = ellipse_ring(truth.semi_axes, z, cfg.contour_points, 0.0)
            .iter()
            .map(|p| [p.x, p.y])
            .collect();
        prostate.push(Contour::new(n, z, ring)?);
        if z.abs() <= 0.8 * c {
            urethra.push(Contour::new(
                n,
                z,
                circle(urethra_center, cfg.urethra_radius_mm, 24),
            )?);
        }
        rectum.push(Contour::new(
            n,
            z,
            circle(rectum_center, cfg.rectum_radius_mm, 32),
        )?);
    }
    let us_prostate = stack(Structure::Prostate, Frame::Trus, step, prostate)?;
    let us_urethra = stack(Structure::Urethra, Frame::Trus, step, urethra)?;
    let us_rectum = stack(Structure::Rectum, Frame::Trus, step, rectum)?;

    // MRI prostate: sections of the deformed organ on MRI slices
    let mapped: Vec<Point3> = dense_ellipsoid(truth.semi_axes, 4000)
        .iter()
        .map(|p| truth.apply(p))
        .collect();
    let (mut lo, mut hi) = (mapped[0], mapped[0]);
    for p in &mapped {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let axis: Vec<Point3> = (0..=400)
        .map(|i| truth.apply(&Point3::new(0.0, 0.0, c * (-0.95 + 1.9 * i as f64 / 400.0))))
        .collect();
    let dz = cfg.mri_slice_mm;
    let max_radius = 2.0 * a.max(b).max(c) + 10.0;
    let mut mri_contours = Vec::new();
    for j in (lo.z / dz).ceil() as i64..=(hi.z / dz).floor() as i64 {
        let z = j as f64 * dz;
        let center = axis
            .iter()
            .min_by(|p, q| (p.z - z).abs().total_cmp(&(q.z - z).abs()))
            .expect("axis samples");
        let traced = trace_section(
            |q| truth.contains_mri(q),
            [center.x, center.y],
            z,
            j,
            cfg.contour_points,
            max_radius,
        );
        if let Some(contour) = traced {
            mri_contours.push(contour);
        }
    }
    if mri_contours.is_empty() {
        return Err(Error::EmptyInput("phantom MRI sections are empty"));
    }
    let mri_prostate = stack(Structure::Prostate, Frame::Mri, dz, mri_contours)?;

    // volumes: smooth organ edge plus a fixed texture
    let trus_grid = geom.volume_grid(n_slices)?;
    let trus_truth = truth.clone();
    let trus = parallel_volume(trus_grid, move |p| {
        80.0 + 400.0 * smooth_inside(trus_truth.ellipsoid_level(p))
            + 30.0 * (p.x / 3.0).sin() * (p.y / 4.0).cos()
    })?;
    let pad = nalgebra::Vector3::repeat(10.0);
    let mri_grid = GridSpec::covering(lo - pad, hi + pad, cfg.mri_voxel_mm)?;
    let mri_truth = truth.clone();
    let mri = parallel_volume(mri_grid, move |q| {
        let p = mri_truth.invert(q);
        300.0 + 600.0 * smooth_inside(mri_truth.ellipsoid_level(&p)) + 40.0 * (q.y / 5.0).sin()
    })?;

    // seeds on a regular lattice inside a shrunken organ, clear of the urethra
    let s = cfg.seed_spacing_mm;
    let mut seeds = Vec::new();
    let range = |r: f64| -((0.8 * r / s).floor() as i64)..=((0.8 * r / s).floor() as i64);
    for kz in range(c) {
        for ky in range(b) {
            for kx in range(a) {
                let p = Point3::new(kx as f64 * s, ky as f64 * s + 0.5 * s, kz as f64 * s);
                let inside = (p.x / (0.8 * a)).powi(2)
                    + (p.y / (0.8 * b)).powi(2)
                    + (p.z / (0.8 * c)).powi(2)
                    < 1.0;
                let du =
                    ((p.x - urethra_center[0]).powi(2) + (p.y - urethra_center[1]).powi(2)).sqrt();
                if inside && du > cfg.urethra_radius_mm + 2.0 {
                    seeds.push(Seed::new(p, 1.0));
                }
            }
        }
    }
    if seeds.is_empty() {
        return Err(Error::EmptyInput("phantom seed lattice is empty"));
    }
    let unit_plan = SeedPlan {
        plan_id: format!("{patient}-plan"),
        source: SourceModel::default(),
        seeds,
    };
    let eval = EvaluateConfig::default();
    let grid = dose_grid_for([&us_prostate].into_iter(), &eval)?;
    let dose = compute_dose_grid(&unit_plan, &grid)?;
    let dvh = compute_dvh(
        &dose,
        &voxelize(&us_prostate, &grid)?,
        "prostate",
        eval.bin_width_gy,
    )?;
    let unit_d90 = dose_at_volume(&dvh, 90.0, eval.d90_mode)?.dose_gy;
    let strength = cfg.target_d90_gy / unit_d90;
    let plan = unit_plan.scaled(strength);

    // files
    let sub = |name: &str| -> Result<PathBuf> {
        let d = dir.join(name);
        OutputLayout::ensure(&d)?;
        Ok(d)
    };
    let volumes = sub("volumes")?;
    let contours = sub("contours")?;
    trus.write_raw(&volumes, "trus")?;
    mri.write_raw(&volumes, "mri")?;
    us_prostate.write_json(contours.join("us_prostate.json"))?;
    us_urethra.write_json(contours.join("us_urethra.json"))?;
    us_rectum.write_json(contours.join("us_rectum.json"))?;
    mri_prostate.write_json(contours.join("mri_prostate.json"))?;
    plan.write_json(dir.join("plan.json"))?;
    let landmarks = Landmarks {
        source: phantom
            .source_landmarks
            .iter()
            .map(|p| [p.x, p.y, p.z])
            .collect(),
        target: phantom
            .target_landmarks
            .iter()
            .map(|p| [p.x, p.y, p.z])
            .collect(),
    };
    write_json(&dir.join("landmarks.json"), &landmarks)?;
    write_json(&dir.join("truth.json"), &truth)?;

    let manifest = PatientCase {
        patient: patient.clone(),
        slice_geometry: geom,
        trus_volume: "volumes/trus.json".into(),
        mri_volume: "volumes/mri.json".into(),
        us_contours: StructurePaths {
            prostate: "contours/us_prostate.json".into(),
            urethra: Some("contours/us_urethra.json".into()),
            rectum: Some("contours/us_rectum.json".into()),
        },
        mri_contours: StructurePaths {
            prostate: "contours/mri_prostate.json".into(),
            urethra: None,
            rectum: None,
        },
        plan: "plan.json".into(),
        landmarks: Some("landmarks.json".into()),
    };
    let manifest_path = dir.join("case.json");
    write_json(&manifest_path, &manifest)?;
    Ok(PhantomCase {
        patient,
        manifest: manifest_path,
        truth,
        seed_strength: strength,
        us_d90_gy: unit_d90 * strength,
        seeds: plan.seeds.len(),
    })
}
