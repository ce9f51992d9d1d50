//! Hierarchical trilinear free-form deformation.
//!
//! Level `l` is a regular lattice with `base_cells · 2^l` cells per axis over
//! a common root box. The displacement at a point is the sum of every level's
//! trilinear interpolant, so each level (and the total) is C⁰ across cell
//! faces. A level only carries non-zero control points on the corners of its
//! *active* cells; the active cells of level `l + 1` are the children of the
//! cells of level `l` flagged in its `subdivided` mask.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Vector3};

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    pub cells: [usize; 3],
    /// One vector per control point, x-fastest over `cells + 1` points per axis.
    pub displacements: Vec<Vector3>,
    /// Cells refined at the next level.
    pub subdivided: Vec<bool>,
    /// Cells whose corner control points may be non-zero.
    pub active: Vec<bool>,
}

impl Lattice {
    fn new(cells: [usize; 3], active: Vec<bool>) -> Self {
        let n_cells = cells[0] * cells[1] * cells[2];
        debug_assert_eq!(active.len(), n_cells);
        Lattice {
            cells,
            displacements: vec![Vector3::zeros(); (cells[0] + 1) * (cells[1] + 1) * (cells[2] + 1)],
            subdivided: vec![false; n_cells],
            active,
        }
    }

    pub fn points_per_axis(&self) -> [usize; 3] {
        [self.cells[0] + 1, self.cells[1] + 1, self.cells[2] + 1]
    }

    #[inline]
    pub fn point_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [px, py, _] = self.points_per_axis();
        i + px * (j + py * k)
    }

    #[inline]
    pub fn point_ijk(&self, idx: usize) -> [usize; 3] {
        let [px, py, _] = self.points_per_axis();
        [idx % px, (idx / px) % py, idx / (px * py)]
    }

    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.cells[0] * (j + self.cells[1] * k)
    }

    pub fn cell_count(&self) -> usize {
        self.active.len()
    }

    /// Control points on the corners of active cells, in index order.
    pub fn free_points(&self) -> Vec<usize> {
        let mut free = vec![false; self.displacements.len()];
        for k in 0..self.cells[2] {
            for j in 0..self.cells[1] {
                for i in 0..self.cells[0] {
                    if self.active[self.cell_index(i, j, k)] {
                        for c in 0..8 {
                            free[self.point_index(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2))] =
                                true;
                        }
                    }
                }
            }
        }
        (0..free.len()).filter(|&i| free[i]).collect()
    }
}

/// Location of a point inside one lattice: cell and in-cell fractions.
#[derive(Clone, Copy, Debug)]
pub(crate) struct CellCoord {
    pub cell: [usize; 3],
    pub frac: [f64; 3],
    /// Axes along which the point was clamped onto the root box.
    pub clamped: [bool; 3],
}

impl CellCoord {
    /// Trilinear weights of the eight cell corners, corner bit order x, y, z.
    #[inline]
    pub fn weights(&self) -> [f64; 8] {
        let [fx, fy, fz] = self.frac;
        let mut w = [0.0; 8];
        for (c, wc) in w.iter_mut().enumerate() {
            let wx = if c & 1 == 1 { fx } else { 1.0 - fx };
            let wy = if (c >> 1) & 1 == 1 { fy } else { 1.0 - fy };
            let wz = if (c >> 2) & 1 == 1 { fz } else { 1.0 - fz };
            *wc = wx * wy * wz;
        }
        w
    }

    #[inline]
    pub fn corner_indices(&self, lattice: &Lattice) -> [usize; 8] {
        let [i, j, k] = self.cell;
        std::array::from_fn(|c| lattice.point_index(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2)))
    }
}

/// Adaptive hierarchical displacement field over a root box.
#[derive(Clone, Debug, PartialEq)]
pub struct OctreeSplineFfd {
    pub bounds_min: Point3,
    pub bounds_max: Point3,
    pub base_cells: [usize; 3],
    pub levels: Vec<Lattice>,
}

impl OctreeSplineFfd {
    /// Zero field with a single fully active level.
    pub fn new(bounds_min: Point3, bounds_max: Point3, base_cells: [usize; 3]) -> Result<Self> {
        if base_cells.iter().any(|&c| c == 0) {
            return Err(Error::InvalidParameter(
                "base lattice needs at least one cell per axis".into(),
            ));
        }
        for a in 0..3 {
            if !(bounds_max[a] > bounds_min[a]) {
                return Err(Error::InvalidParameter(format!(
                    "empty root box on axis {a}: [{}, {}]",
                    bounds_min[a], bounds_max[a]
                )));
            }
        }
        let n = base_cells.iter().product();
        Ok(OctreeSplineFfd {
            bounds_min,
            bounds_max,
            base_cells,
            levels: vec![Lattice::new(base_cells, vec![true; n])],
        })
    }

    /// Cells per axis at a given level.
    pub fn cells_at(&self, level: usize) -> [usize; 3] {
        self.base_cells.map(|c| c << level)
    }

    pub fn cell_size(&self, level: usize) -> Vector3 {
        let cells = self.cells_at(level);
        Vector3::from_fn(|a, _| (self.bounds_max[a] - self.bounds_min[a]) / cells[a] as f64)
    }

    pub(crate) fn locate(&self, level: usize, x: &Point3) -> CellCoord {
        let cells = self.levels[level].cells;
        let mut cell = [0; 3];
        let mut frac = [0.0; 3];
        let mut clamped = [false; 3];
        for a in 0..3 {
            let extent = self.bounds_max[a] - self.bounds_min[a];
            let mut t = (x[a] - self.bounds_min[a]) / extent * cells[a] as f64;
            if !(t >= 0.0) {
                t = 0.0;
                clamped[a] = true;
            } else if t > cells[a] as f64 {
                t = cells[a] as f64;
                clamped[a] = true;
            }
            let i = (t.floor() as usize).min(cells[a] - 1);
            cell[a] = i;
            frac[a] = t - i as f64;
        }
        CellCoord {
            cell,
            frac,
            clamped,
        }
    }

    /// Adds a finer level whose active cells are the children of the cells
    /// flagged in the current finest level's `subdivided` mask.
    pub fn push_level(&mut self) {
        let parent = self.levels.last().expect("at least one level");
        let cells = parent.cells.map(|c| 2 * c);
        let mut active = vec![false; cells.iter().product()];
        for k in 0..cells[2] {
            for j in 0..cells[1] {
                for i in 0..cells[0] {
                    if parent.subdivided[parent.cell_index(i / 2, j / 2, k / 2)] {
                        active[i + cells[0] * (j + cells[1] * k)] = true;
                    }
                }
            }
        }
        self.levels.push(Lattice::new(cells, active));
    }

    /// Displacement contributed by levels `0..upto`.
    pub fn displacement_upto(&self, x: &Point3, upto: usize) -> Vector3 {
        let mut d = Vector3::zeros();
        for (l, lattice) in self.levels.iter().enumerate().take(upto) {
            let loc = self.locate(l, x);
            let w = loc.weights();
            let idx = loc.corner_indices(lattice);
            for c in 0..8 {
                d += w[c] * lattice.displacements[idx[c]];
            }
        }
        d
    }

    pub fn displacement(&self, x: &Point3) -> Vector3 {
        self.displacement_upto(x, self.levels.len())
    }

    /// Spatial derivative of the displacement (zero along clamped axes).
    pub fn displacement_jacobian(&self, x: &Point3) -> Matrix3<f64> {
        let mut jac = Matrix3::zeros();
        for (l, lattice) in self.levels.iter().enumerate() {
            let loc = self.locate(l, x);
            let idx = loc.corner_indices(lattice);
            let size = self.cell_size(l);
            for axis in 0..3 {
                if loc.clamped[axis] {
                    continue;
                }
                for c in 0..8 {
                    let mut dw = 1.0 / size[axis];
                    for b in 0..3 {
                        let bit = (c >> b) & 1 == 1;
                        if b == axis {
                            if !bit {
                                dw = -dw;
                            }
                        } else {
                            dw *= if bit { loc.frac[b] } else { 1.0 - loc.frac[b] };
                        }
                    }
                    let v = lattice.displacements[idx[c]];
                    for r in 0..3 {
                        jac[(r, axis)] += dw * v[r];
                    }
                }
            }
        }
        jac
    }

    pub fn max_displacement(&self) -> f64 {
        self.levels
            .iter()
            .flat_map(|l| l.displacements.iter())
            .map(|d| d.norm())
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, x: &Point3) -> bool {
        (0..3).all(|a| x[a] >= self.bounds_min[a] && x[a] <= self.bounds_max[a])
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct FfdJson {
    bounds_min: [f64; 3],
    bounds_max: [f64; 3],
    base_cells: [usize; 3],
    levels: Vec<LatticeJson>,
}

#[derive(Serialize, Deserialize)]
struct LatticeJson {
    cells: [usize; 3],
    displacements: Vec<[f64; 3]>,
    subdivided: Vec<bool>,
}

impl From<&OctreeSplineFfd> for FfdJson {
    fn from(f: &OctreeSplineFfd) -> Self {
        FfdJson {
            bounds_min: f.bounds_min.coords.into(),
            bounds_max: f.bounds_max.coords.into(),
            base_cells: f.base_cells,
            levels: f
                .levels
                .iter()
                .map(|l| LatticeJson {
                    cells: l.cells,
                    displacements: l.displacements.iter().map(|d| (*d).into()).collect(),
                    subdivided: l.subdivided.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<FfdJson> for OctreeSplineFfd {
    type Error = Error;

    fn try_from(j: FfdJson) -> Result<Self> {
        if j.levels.is_empty() {
            return Err(Error::Parse("deformation has no levels".into()));
        }
        let mut ffd = OctreeSplineFfd::new(
            Point3::from(j.bounds_min),
            Point3::from(j.bounds_max),
            j.base_cells,
        )?;
        for (l, lj) in j.levels.into_iter().enumerate() {
            if l > 0 {
                ffd.push_level();
            }
            let lattice = &mut ffd.levels[l];
            if lj.cells != lattice.cells
                || lj.displacements.len() != lattice.displacements.len()
                || lj.subdivided.len() != lattice.subdivided.len()
            {
                return Err(Error::Parse(format!(
                    "level {l} has inconsistent lattice sizes"
                )));
            }
            if lj.displacements.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Parse(format!(
                    "level {l} has non-finite displacements"
                )));
            }
            lattice.displacements = lj.displacements.into_iter().map(Vector3::from).collect();
            lattice.subdivided = lj.subdivided;
        }
        Ok(ffd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_ffd() -> OctreeSplineFfd {
        OctreeSplineFfd::new(
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(10.0, 10.0, 10.0),
            [1, 1, 1],
        )
        .unwrap()
    }

    #[test]
    fn trilinear_inside_one_cell() {
        // control displacements linear in position: d = A x + b
        let mut f = unit_ffd();
        let a = Matrix3::new(0.1, 0.02, 0.0, -0.03, 0.05, 0.01, 0.0, 0.04, -0.02);
        let b = Vector3::new(0.5, -0.25, 1.0);
        for idx in 0..8 {
            let [i, j, k] = f.levels[0].point_ijk(idx);
            let x = Vector3::new(i as f64, j as f64, k as f64) * 10.0;
            f.levels[0].displacements[idx] = a * x + b;
        }
        let p = Point3::new(2.5, 7.0, 4.0);
        let expected = a * p.coords + b;
        assert!((f.displacement(&p) - expected).norm() < 1e-12);
        assert!((f.displacement_jacobian(&p) - a).amax() < 1e-12);
    }

    #[test]
    fn hand_computed_corner_mix() {
        let mut f = unit_ffd();
        // only corner (1,0,0) moves
        let idx = f.levels[0].point_index(1, 0, 0);
        f.levels[0].displacements[idx] = Vector3::new(16.0, 0.0, 0.0);
        // weight of corner (1,0,0) at (0.25,0.5,0.5) of the cell: 0.25*0.5*0.5 = 1/16
        let d = f.displacement(&Point3::new(2.5, 5.0, 5.0));
        assert!((d.x - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clamps_outside_root() {
        let mut f = unit_ffd();
        for d in &mut f.levels[0].displacements {
            *d = Vector3::new(1.0, 2.0, 3.0);
        }
        let d = f.displacement(&Point3::new(-50.0, 5.0, 80.0));
        assert!((d - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        assert_eq!(
            f.displacement_jacobian(&Point3::new(-50.0, 5.0, 80.0)),
            Matrix3::zeros()
        );
    }

    #[test]
    fn refinement_activates_children_only() {
        let mut f =
            OctreeSplineFfd::new(Point3::origin(), Point3::new(8.0, 8.0, 8.0), [2, 2, 2]).unwrap();
        f.levels[0].subdivided[0] = true;
        f.push_level();
        let l1 = &f.levels[1];
        assert_eq!(l1.cells, [4, 4, 4]);
        assert_eq!(l1.active.iter().filter(|&&a| a).count(), 8);
        assert_eq!(l1.free_points().len(), 27);
    }

    #[test]
    fn continuous_across_faces() {
        let mut f =
            OctreeSplineFfd::new(Point3::origin(), Point3::new(8.0, 8.0, 8.0), [2, 2, 2]).unwrap();
        for (i, d) in f.levels[0].displacements.iter_mut().enumerate() {
            *d = Vector3::new(
                (i % 5) as f64,
                (i % 3) as f64 * 0.5,
                -((i % 7) as f64) * 0.25,
            );
        }
        for y in [0.3, 1.7, 6.2] {
            let a = f.displacement(&Point3::new(4.0 - 1e-12, y, 2.0));
            let b = f.displacement(&Point3::new(4.0 + 1e-12, y, 2.0));
            assert!((a - b).norm() < 1e-9);
        }
    }
}
