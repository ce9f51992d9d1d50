use nalgebra::{Matrix3, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{DistanceField, GridSpec, KdTree, Point3, SurfaceModel, Vector3};

const NORMAL_NEIGHBORS: usize = 8;

/// Point-to-surface distance on a target cloud.
///
/// Far from the surface the interpolated distance field is used. Close to
/// it the distance is measured to the tangent plane of the nearest sample,
/// whose normal comes from a local principal-component fit; samples without
/// a planar neighbourhood fall back to the plain sample distance.
pub struct SurfaceDistance {
    tree: KdTree,
    field: DistanceField,
    normals: Vec<Option<Vector3>>,
    exact_below: f64,
}

fn local_normal(tree: &KdTree, i: usize) -> Option<Vector3> {
    let pts = tree.points();
    let nb = tree.k_nearest(&pts[i], NORMAL_NEIGHBORS);
    if nb.len() < 4 {
        return None;
    }
    let mean = nb
        .iter()
        .fold(Vector3::zeros(), |acc, &j| acc + pts[j].coords)
        / nb.len() as f64;
    let mut cov = Matrix3::zeros();
    for &j in &nb {
        let d = pts[j].coords - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (lo, mid) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    // a line of samples or an isotropic blob has no tangent plane
    if !(mid > 0.0) || lo > 0.5 * mid {
        return None;
    }
    Some(eig.eigenvectors.column(order[0]).into_owned())
}

impl SurfaceDistance {
    pub fn new(target: &SurfaceModel, spacing: f64, margin: f64, exact_below: f64) -> Result<Self> {
        let (lo, hi) = target
            .bounds()
            .ok_or(Error::EmptyInput("target surface is empty"))?;
        let m = nalgebra::Vector3::repeat(margin);
        let grid = GridSpec::covering(lo - m, hi + m, spacing)?;
        let tree = KdTree::new(&target.points);
        let field = DistanceField::from_tree(&tree, &grid);
        let normals = (0..tree.len()).map(|i| local_normal(&tree, i)).collect();
        Ok(SurfaceDistance {
            tree,
            field,
            normals,
            exact_below,
        })
    }

    /// Distance and its gradient.
    #[inline]
    pub fn query(&self, q: &Point3) -> (f64, Vector3) {
        if let Some((d, g)) = self.field.sample_with_gradient(q) {
            if d >= self.exact_below {
                return (d, g);
            }
        }
        let (i, d) = self.tree.nearest(q).expect("target is non-empty");
        let offset = q - self.tree.points()[i];
        if let Some(n) = self.normals[i] {
            let s = n.dot(&offset);
            return (s.abs(), if s >= 0.0 { n } else { -n });
        }
        let g = if d > 1e-12 {
            offset / d
        } else {
            Vector3::zeros()
        };
        (d, g)
    }

    /// Distance to the closest target sample.
    pub fn exact(&self, q: &Point3) -> f64 {
        self.tree.nearest(q).expect("target is non-empty").1
    }
}
