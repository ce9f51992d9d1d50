use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::composite::SliceGeometry;
use crate::error::{Error, Result};
use crate::geometry::{signed_area, Contour, ContourStack, Frame, Point3};
use crate::registration::{invert_point, TransferFunction, INVERT_TOLERANCE_MM};

/// Fraction of vertices allowed to fail inversion before the mapping is rejected.
pub const MAX_FAILED_FRACTION: f64 = 0.01;

/// TRUS-frame contours recovered from an MRI stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappedContours {
    pub stack: ContourStack,
    /// MRI vertices whose inversion did not converge (dropped).
    pub failed_vertices: Vec<[f64; 3]>,
    /// TRUS slices that collected too few or collinear points.
    pub rejected_slices: Vec<i64>,
}

/// Orders points around their centroid, removing exact duplicates.
fn polar_polygon(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let n = points.len() as f64;
    let cx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let mut keyed: Vec<(f64, f64, [f64; 2])> = points
        .iter()
        .map(|p| {
            let (dx, dy) = (p[0] - cx, p[1] - cy);
            (dy.atan2(dx), dx * dx + dy * dy, *p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(keyed.len());
    for (_, _, p) in keyed {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}

/// Maps MRI contours into the TRUS frame through `f⁻¹` and re-slices them
/// onto the TRUS slice planes of `geom`.
pub fn map_mri_contours_to_trus(
    mri: &ContourStack,
    f: &TransferFunction,
    geom: &SliceGeometry,
) -> Result<MappedContours> {
    geom.validate()?;
    if mri.frame != Frame::Mri {
        return Err(Error::FrameMismatch {
            expected: Frame::Mri.to_string(),
            found: mri.frame.to_string(),
        });
    }
    let vertices: Vec<Point3> = mri
        .contours
        .iter()
        .flat_map(|c| {
            c.vertices
                .iter()
                .map(move |v| Point3::new(v[0], v[1], c.z_mm))
        })
        .collect();
    let total = vertices.len();
    let mut failed = Vec::new();
    let mut bins: BTreeMap<i64, Vec<[f64; 2]>> = BTreeMap::new();
    for q in &vertices {
        match invert_point(f, q, INVERT_TOLERANCE_MM) {
            Ok(p) => bins
                .entry(geom.nearest_slice(p.z))
                .or_default()
                .push([p.x, p.y]),
            Err(_) => failed.push([q.x, q.y, q.z]),
        }
    }
    if failed.len() as f64 > MAX_FAILED_FRACTION * total as f64 {
        return Err(Error::MappingFailure { failed, total });
    }

    let mut contours = Vec::new();
    let mut rejected = Vec::new();
    for (n, pts) in bins {
        let poly = polar_polygon(&pts);
        let scale = poly
            .iter()
            .map(|p| p[0].abs().max(p[1].abs()))
            .fold(1.0, f64::max);
        if poly.len() < 3 || signed_area(&poly).abs() <= 1e-9 * scale * scale {
            rejected.push(n);
            continue;
        }
        match Contour::new(n, geom.slice_z(n), poly) {
            Ok(c) => contours.push(c),
            Err(_) => rejected.push(n),
        }
    }
    if contours.is_empty() {
        return Err(Error::EmptyInput(
            "no TRUS slice received a valid mapped contour",
        ));
    }
    let stack = ContourStack::new(
        mri.structure.clone(),
        Frame::Trus,
        geom.slice_step,
        contours,
    )?;
    Ok(MappedContours {
        stack,
        failed_vertices: failed,
        rejected_slices: rejected,
    })
}
