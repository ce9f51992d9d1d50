use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::read_json;
use crate::dosimetry::{SeedPlan, StructureSet};
use crate::error::{Error, Result};
use crate::fusion::{ScalarVolume, SliceGeometry};
use crate::geometry::{ContourStack, Frame, Point3, Structure};

/// Contour files of one delineation. Paths are relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructurePaths {
    pub prostate: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub urethra: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rectum: Option<PathBuf>,
}

/// One patient case on disk (`<case>.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientCase {
    pub patient: String,
    pub slice_geometry: SliceGeometry,
    /// Header of the TRUS volume; its grid must match `slice_geometry`.
    pub trus_volume: PathBuf,
    pub mri_volume: PathBuf,
    pub us_contours: StructurePaths,
    pub mri_contours: StructurePaths,
    pub plan: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<PathBuf>,
}

/// Corresponding points withheld from registration (TRUS → MRI).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Landmarks {
    pub source: Vec<[f64; 3]>,
    pub target: Vec<[f64; 3]>,
}

impl Landmarks {
    pub fn points(&self) -> Result<(Vec<Point3>, Vec<Point3>)> {
        if self.source.len() != self.target.len() {
            return Err(Error::LengthMismatch {
                left: self.source.len(),
                right: self.target.len(),
            });
        }
        let lift = |v: &[[f64; 3]]| v.iter().map(|p| Point3::from(*p)).collect();
        Ok((lift(&self.source), lift(&self.target)))
    }
}

#[derive(Clone, Debug)]
pub struct LoadedCase {
    pub manifest: PatientCase,
    /// Directory the manifest's relative paths resolve against.
    pub dir: PathBuf,
    pub trus: ScalarVolume,
    pub mri: ScalarVolume,
    pub us: StructureSet,
    pub mri_structures: StructureSet,
    pub plan: SeedPlan,
    pub landmarks: Option<Landmarks>,
}

fn load_set(dir: &Path, paths: &StructurePaths, frame: Frame, which: &str) -> Result<StructureSet> {
    let mut set = StructureSet::new();
    let entries = [
        (Structure::Prostate, Some(&paths.prostate)),
        (Structure::Urethra, paths.urethra.as_ref()),
        (Structure::Rectum, paths.rectum.as_ref()),
    ];
    for (structure, path) in entries {
        let Some(path) = path else { continue };
        let stack = ContourStack::read_json(dir.join(path))?;
        if stack.frame != frame {
            return Err(Error::FrameMismatch {
                expected: frame.to_string(),
                found: format!("{} ({which} {structure})", stack.frame),
            });
        }
        if stack.structure != structure {
            return Err(Error::InvalidParameter(format!(
                "{which} {structure} file holds a {} stack",
                stack.structure
            )));
        }
        set.insert(structure, stack);
    }
    Ok(set)
}

impl PatientCase {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    /// Reads every referenced file and checks frames and grids.
    pub fn load(path: impl AsRef<Path>) -> Result<LoadedCase> {
        let path = path.as_ref();
        let manifest = Self::read(path)?;
        let dir = path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf();
        manifest.slice_geometry.validate()?;
        let trus = ScalarVolume::read_raw(dir.join(&manifest.trus_volume))?;
        let g = &manifest.slice_geometry;
        let expected = g.volume_grid(trus.grid.dims[2])?;
        if trus.grid != expected {
            return Err(Error::DimensionMismatch(format!(
                "TRUS volume grid {:?} does not match the slice geometry {:?}",
                trus.grid, expected
            )));
        }
        let mri = ScalarVolume::read_raw(dir.join(&manifest.mri_volume))?;
        let us = load_set(&dir, &manifest.us_contours, Frame::Trus, "US")?;
        let mri_structures = load_set(&dir, &manifest.mri_contours, Frame::Mri, "MRI")?;
        let plan = SeedPlan::read_json(dir.join(&manifest.plan))?;
        let landmarks = match &manifest.landmarks {
            Some(p) => {
                let lm: Landmarks = read_json(&dir.join(p))?;
                lm.points()?;
                Some(lm)
            }
            None => None,
        };
        Ok(LoadedCase {
            manifest,
            dir,
            trus,
            mri,
            us,
            mri_structures,
            plan,
            landmarks,
        })
    }
}
