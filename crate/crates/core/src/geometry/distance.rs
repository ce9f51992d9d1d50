use rayon::prelude::*;

use super::{GridSpec, KdTree, Point3, SurfaceModel, Vector3};
use crate::error::{Error, Result};

/// Unsigned distance from every voxel centre to the nearest surface sample.
#[derive(Clone, Debug)]
pub struct DistanceField {
    pub grid: GridSpec,
    pub distance: Vec<f64>,
    pub nearest: Vec<u32>,
}

/// Exact per-voxel nearest-sample distance (ties to the lowest sample index).
pub fn build_distance_field(surface: &SurfaceModel, grid: &GridSpec) -> Result<DistanceField> {
    if surface.is_empty() {
        return Err(Error::EmptyInput("distance field of an empty surface"));
    }
    grid.validate()?;
    let tree = KdTree::new(&surface.points);
    Ok(DistanceField::from_tree(&tree, grid))
}

impl DistanceField {
    pub(crate) fn from_tree(tree: &KdTree, grid: &GridSpec) -> Self {
        let (distance, nearest): (Vec<f64>, Vec<u32>) = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let (i, d) = tree
                    .nearest(&grid.center_of(idx))
                    .expect("tree is non-empty");
                (d, i as u32)
            })
            .unzip();
        DistanceField {
            grid: grid.clone(),
            distance,
            nearest,
        }
    }

    /// Trilinear interpolation of the stored distances; `None` outside the
    /// box spanned by the voxel centres.
    pub fn sample(&self, p: &Point3) -> Option<f64> {
        let g = &self.grid;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let t = (p[a] - g.origin[a]) / g.spacing[a];
            let n = g.dims[a];
            if !(t >= 0.0) || t > (n - 1) as f64 {
                return None;
            }
            if n == 1 {
                base[a] = 0;
                frac[a] = 0.0;
                continue;
            }
            let i = (t.floor() as usize).min(n - 2);
            base[a] = i;
            frac[a] = t - i as f64;
        }
        let step = [
            usize::from(g.dims[0] > 1),
            usize::from(g.dims[1] > 1),
            usize::from(g.dims[2] > 1),
        ];
        let mut acc = 0.0;
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let mut w = 1.0;
            for a in 0..3 {
                w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            if w == 0.0 {
                continue;
            }
            let idx = g.index(
                base[0] + off[0] * step[0],
                base[1] + off[1] * step[1],
                base[2] + off[2] * step[2],
            );
            acc += w * self.distance[idx];
        }
        Some(acc)
    }

    /// Interpolated distance with a central-difference gradient.
    pub fn sample_with_gradient(&self, p: &Point3) -> Option<(f64, Vector3)> {
        let d = self.sample(p)?;
        let mut grad = Vector3::zeros();
        for a in 0..3 {
            let h = 0.5 * self.grid.spacing[a];
            let mut lo = *p;
            let mut hi = *p;
            lo[a] -= h;
            hi[a] += h;
            let (dl, dh) = (self.sample(&lo)?, self.sample(&hi)?);
            grad[a] = (dh - dl) / (2.0 * h);
        }
        Some((d, grad))
    }
}
