//! Contours, surfaces, voxel grids and spatial queries.
//!
//! Units are fixed throughout the crate: millimetres for lengths, cubic
//! centimetres (cc) for volumes and gray (Gy) for doses.

mod distance;
mod kdtree;
mod trace;
mod voxel;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use distance::{build_distance_field, DistanceField};
pub use kdtree::KdTree;
pub use trace::trace_section;
pub use voxel::{voxelize, MaskHeader, StructureMask};

pub type Point3 = nalgebra::Point3<f64>;
pub type Vector3 = nalgebra::Vector3<f64>;

/// Cubic millimetres per cubic centimetre.
pub const MM3_PER_CC: f64 = 1000.0;

/// Coordinate frame a geometric object is expressed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Frame {
    #[serde(rename = "TRUS")]
    Trus,
    #[serde(rename = "MRI")]
    Mri,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::Trus => f.write_str("TRUS"),
            Frame::Mri => f.write_str("MRI"),
        }
    }
}

/// Anatomical label of a contoured structure.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Structure {
    Prostate,
    Urethra,
    Rectum,
    Other(String),
}

impl From<String> for Structure {
    fn from(s: String) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "prostate" => Structure::Prostate,
            "urethra" => Structure::Urethra,
            "rectum" => Structure::Rectum,
            _ => Structure::Other(s),
        }
    }
}

impl From<Structure> for String {
    fn from(s: Structure) -> Self {
        s.to_string()
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Structure::Prostate => f.write_str("prostate"),
            Structure::Urethra => f.write_str("urethra"),
            Structure::Rectum => f.write_str("rectum"),
            Structure::Other(s) => f.write_str(s),
        }
    }
}

/// Regular voxel grid. `origin` is the centre of voxel `(0, 0, 0)` and
/// voxels are stored x-fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let grid = GridSpec {
            dims,
            spacing,
            origin,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Isotropic grid whose voxel centres cover `[min, max]` on every axis.
    pub fn covering(min: Point3, max: Point3, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        let mut dims = [0; 3];
        for a in 0..3 {
            let span = (max[a] - min[a]).max(0.0);
            dims[a] = (span / spacing).ceil() as usize + 1;
        }
        GridSpec::new(dims, [spacing; 3], [min.x, min.y, min.z])
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidParameter(format!(
                "grid dims must be positive, got {:?}",
                self.dims
            )));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidParameter("grid origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> Point3 {
        Point3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }

    #[inline]
    pub fn center_of(&self, idx: usize) -> Point3 {
        let [i, j, k] = self.ijk(idx);
        self.center(i, j, k)
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn voxel_volume_cc(&self) -> f64 {
        self.voxel_volume_mm3() / MM3_PER_CC
    }

    /// Lower corner of the region covered by the voxels (not the first centre).
    pub fn outer_min(&self) -> Point3 {
        Point3::new(
            self.origin[0] - 0.5 * self.spacing[0],
            self.origin[1] - 0.5 * self.spacing[1],
            self.origin[2] - 0.5 * self.spacing[2],
        )
    }

    pub fn outer_max(&self) -> Point3 {
        Point3::new(
            self.origin[0] + (self.dims[0] as f64 - 0.5) * self.spacing[0],
            self.origin[1] + (self.dims[1] as f64 - 0.5) * self.spacing[1],
            self.origin[2] + (self.dims[2] as f64 - 0.5) * self.spacing[2],
        )
    }
}

/// Closed planar polygon on one axial slice. Vertices are `(u, v)` in mm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawContour")]
pub struct Contour {
    pub slice_index: i64,
    pub z_mm: f64,
    pub vertices: Vec<[f64; 2]>,
}

#[derive(Deserialize)]
struct RawContour {
    slice_index: i64,
    z_mm: f64,
    vertices: Vec<[f64; 2]>,
}

impl TryFrom<RawContour> for Contour {
    type Error = Error;

    fn try_from(raw: RawContour) -> Result<Self> {
        Contour::new(raw.slice_index, raw.z_mm, raw.vertices)
    }
}

impl Contour {
    pub fn new(slice_index: i64, z_mm: f64, vertices: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidContour(format!(
                "slice {slice_index}: {} vertices, need at least 3",
                vertices.len()
            )));
        }
        if !z_mm.is_finite() || vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidContour(format!(
                "slice {slice_index}: non-finite coordinate"
            )));
        }
        if let Some((a, b)) = first_self_intersection(&vertices) {
            return Err(Error::InvalidContour(format!(
                "slice {slice_index}: edges {a} and {b} intersect"
            )));
        }
        Ok(Contour {
            slice_index,
            z_mm,
            vertices,
        })
    }

    /// Unsigned shoelace area in mm².
    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        point_in_polygon(&self.vertices, u, v)
    }

    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in &self.vertices {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }
}

/// Shoelace area of a vertex list, with the contour validity rules applied.
pub fn contour_area(vertices: &[[f64; 2]]) -> Result<f64> {
    if vertices.len() < 3 {
        return Err(Error::InvalidContour(format!(
            "{} vertices, need at least 3",
            vertices.len()
        )));
    }
    Ok(signed_area(vertices).abs())
}

pub(crate) fn signed_area(vertices: &[[f64; 2]]) -> f64 {
    let n = vertices.len();
    let mut acc = 0.0;
    for i in 0..n {
        let p = vertices[i];
        let q = vertices[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

pub(crate) fn point_in_polygon(vertices: &[[f64; 2]], u: f64, v: f64) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (vertices[i], vertices[j]);
        if (pi[1] > v) != (pj[1] > v) {
            let cross = pj[0] + (v - pj[1]) / (pi[1] - pj[1]) * (pi[0] - pj[0]);
            if u < cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0])
        && p[0] <= a[0].max(b[0])
        && p[1] >= a[1].min(b[1])
        && p[1] <= a[1].max(b[1])
}

fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Returns the first pair of non-adjacent edges that touch, if any.
fn first_self_intersection(vertices: &[[f64; 2]]) -> Option<(usize, usize)> {
    let n = vertices.len();
    if n < 4 {
        return None;
    }
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (vertices[j], vertices[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return Some((i, j));
            }
        }
    }
    None
}

/// Parallel axial contours of one structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStack")]
pub struct ContourStack {
    pub structure: Structure,
    pub frame: Frame,
    pub slice_spacing_mm: f64,
    pub contours: Vec<Contour>,
}

#[derive(Deserialize)]
struct RawStack {
    structure: Structure,
    frame: Frame,
    slice_spacing_mm: f64,
    contours: Vec<Contour>,
}

impl TryFrom<RawStack> for ContourStack {
    type Error = Error;

    fn try_from(raw: RawStack) -> Result<Self> {
        ContourStack::new(raw.structure, raw.frame, raw.slice_spacing_mm, raw.contours)
    }
}

impl ContourStack {
    /// Validates and sorts the contours by z.
    pub fn new(
        structure: Structure,
        frame: Frame,
        slice_spacing_mm: f64,
        mut contours: Vec<Contour>,
    ) -> Result<Self> {
        if !(slice_spacing_mm > 0.0) || !slice_spacing_mm.is_finite() {
            return Err(Error::InvalidStack(format!(
                "slice spacing must be positive, got {slice_spacing_mm}"
            )));
        }
        if contours.is_empty() {
            return Err(Error::EmptyInput("contour stack has no contours"));
        }
        contours.sort_by(|a, b| a.z_mm.total_cmp(&b.z_mm));
        let z0 = contours[0].z_mm;
        for c in &contours {
            let steps = (c.z_mm - z0) / slice_spacing_mm;
            if (steps - steps.round()).abs() > 1e-6 {
                return Err(Error::InvalidStack(format!(
                    "contour at z={} is not a multiple of {} mm from z={}",
                    c.z_mm, slice_spacing_mm, z0
                )));
            }
        }
        Ok(ContourStack {
            structure,
            frame,
            slice_spacing_mm,
            contours,
        })
    }

    /// Axis-aligned bounds of all vertices, z extended by half a slice.
    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for c in &self.contours {
            let (clo, chi) = c.bounds();
            lo.x = lo.x.min(clo[0]);
            lo.y = lo.y.min(clo[1]);
            hi.x = hi.x.max(chi[0]);
            hi.y = hi.y.max(chi[1]);
        }
        let half = 0.5 * self.slice_spacing_mm;
        lo.z = self.contours[0].z_mm - half;
        hi.z = self.contours[self.contours.len() - 1].z_mm + half;
        (lo, hi)
    }

    pub fn read_json(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn write_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::json("contour stack", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Planimetric volume in cc: sum of contour areas times the slice spacing.
pub fn planimetric_volume(stack: &ContourStack) -> f64 {
    let area: f64 = stack.contours.iter().map(Contour::area).sum();
    area * stack.slice_spacing_mm / MM3_PER_CC
}

/// Arithmetic mean of a point set.
pub fn centroid(points: &[Point3]) -> Result<Point3> {
    if points.is_empty() {
        return Err(Error::EmptyInput("centroid of an empty point set"));
    }
    let sum = points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Ok(Point3::from(sum / points.len() as f64))
}

/// Acquisition a surface sample came from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    #[default]
    Unspecified,
    Axial,
    PseudoSagittal,
}

/// Segmented organ surface as a point cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceModel {
    pub frame: Frame,
    pub points: Vec<Point3>,
    /// One tag per point.
    pub provenance: Vec<Provenance>,
}

impl SurfaceModel {
    pub fn new(frame: Frame, points: Vec<Point3>) -> Self {
        let provenance = vec![Provenance::Unspecified; points.len()];
        SurfaceModel {
            frame,
            points,
            provenance,
        }
    }

    pub fn with_provenance(frame: Frame, points: Vec<Point3>, tag: Provenance) -> Self {
        let provenance = vec![tag; points.len()];
        SurfaceModel {
            frame,
            points,
            provenance,
        }
    }

    /// All contour vertices lifted to 3-D, tagged as axial samples.
    pub fn from_contours(stack: &ContourStack) -> Self {
        let points = stack
            .contours
            .iter()
            .flat_map(|c| c.vertices.iter().map(|v| Point3::new(v[0], v[1], c.z_mm)))
            .collect();
        SurfaceModel::with_provenance(stack.frame, points, Provenance::Axial)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        Some(
            self.points
                .iter()
                .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
        )
    }
}

/// Tolerance under which two merged samples are treated as the same point.
pub const MERGE_DEDUP_MM: f64 = 0.01;

/// Appends pseudo-sagittal samples to an axial surface, dropping points
/// within [`MERGE_DEDUP_MM`] of one already kept.
pub fn merge_point_sets(axial: &SurfaceModel, sagittal: &SurfaceModel) -> Result<SurfaceModel> {
    if axial.frame != sagittal.frame {
        return Err(Error::FrameMismatch {
            expected: axial.frame.to_string(),
            found: sagittal.frame.to_string(),
        });
    }
    let mut merged = axial.clone();
    if merged.provenance.len() != merged.points.len() {
        merged.provenance = vec![Provenance::Unspecified; merged.points.len()];
    }
    let tol2 = MERGE_DEDUP_MM * MERGE_DEDUP_MM;
    for (i, p) in sagittal.points.iter().enumerate() {
        let dup = merged.points.iter().any(|q| (q - p).norm_squared() <= tol2);
        if !dup {
            merged.points.push(*p);
            merged
                .provenance
                .push(sagittal.provenance.get(i).copied().unwrap_or_default());
        }
    }
    Ok(merged)
}
