//! Sparse symmetric systems over a lattice with 3×3 blocks coupling each
//! control point to its 26 neighbours, solved by block-Jacobi PCG.

use nalgebra::Matrix3;

use super::ffd::Lattice;
use crate::geometry::Vector3;

pub(crate) const NONE: u32 = u32::MAX;
pub(crate) const CENTER: usize = 13;

#[inline]
pub(crate) fn slot(d: [isize; 3]) -> usize {
    ((d[0] + 1) + 3 * (d[1] + 1) + 9 * (d[2] + 1)) as usize
}

/// Free control points of one lattice and their neighbour tables.
pub(crate) struct Stencil {
    /// Lattice point id of each free unknown.
    pub free: Vec<usize>,
    /// Free index of each lattice point, `NONE` when fixed.
    pub free_of: Vec<u32>,
    /// Free index of the neighbour at each offset slot.
    pub neighbors: Vec<[u32; 27]>,
}

impl Stencil {
    pub fn new(lattice: &Lattice) -> Self {
        let free = lattice.free_points();
        let mut free_of = vec![NONE; lattice.displacements.len()];
        for (f, &p) in free.iter().enumerate() {
            free_of[p] = f as u32;
        }
        let dims = lattice.points_per_axis();
        let neighbors = free
            .iter()
            .map(|&p| {
                let ijk = lattice.point_ijk(p);
                let mut row = [NONE; 27];
                for dk in -1isize..=1 {
                    for dj in -1isize..=1 {
                        for di in -1isize..=1 {
                            let n = [
                                ijk[0] as isize + di,
                                ijk[1] as isize + dj,
                                ijk[2] as isize + dk,
                            ];
                            if (0..3).all(|a| n[a] >= 0 && (n[a] as usize) < dims[a]) {
                                let q = lattice.point_index(
                                    n[0] as usize,
                                    n[1] as usize,
                                    n[2] as usize,
                                );
                                row[slot([di, dj, dk])] = free_of[q];
                            }
                        }
                    }
                }
                row
            })
            .collect();
        Stencil {
            free,
            free_of,
            neighbors,
        }
    }

    pub fn len(&self) -> usize {
        self.free.len()
    }

    /// Slots of the six face neighbours.
    pub fn face_slots() -> [usize; 6] {
        [
            slot([-1, 0, 0]),
            slot([1, 0, 0]),
            slot([0, -1, 0]),
            slot([0, 1, 0]),
            slot([0, 0, -1]),
            slot([0, 0, 1]),
        ]
    }
}

pub(crate) struct BlockMatrix {
    pub blocks: Vec<[Matrix3<f64>; 27]>,
}

impl BlockMatrix {
    pub fn zeros(n: usize) -> Self {
        BlockMatrix {
            blocks: vec![[Matrix3::zeros(); 27]; n],
        }
    }

    pub fn matvec(&self, stencil: &Stencil, x: &[Vector3], y: &mut [Vector3]) {
        for (a, row) in self.blocks.iter().enumerate() {
            let mut acc = Vector3::zeros();
            for (s, &b) in stencil.neighbors[a].iter().enumerate() {
                if b != NONE {
                    acc += row[s] * x[b as usize];
                }
            }
            y[a] = acc;
        }
    }
}

fn dot(a: &[Vector3], b: &[Vector3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub(crate) fn pcg(
    a: &BlockMatrix,
    stencil: &Stencil,
    b: &[Vector3],
    tol: f64,
    max_iter: usize,
) -> Vec<Vector3> {
    let n = b.len();
    let precond: Vec<Matrix3<f64>> = a
        .blocks
        .iter()
        .map(|row| {
            row[CENTER].try_inverse().unwrap_or_else(|| {
                Matrix3::from_diagonal(&row[CENTER].diagonal().map(|d| {
                    if d != 0.0 {
                        1.0 / d
                    } else {
                        0.0
                    }
                }))
            })
        })
        .collect();
    let mut x = vec![Vector3::zeros(); n];
    let mut r = b.to_vec();
    let mut z: Vec<Vector3> = r.iter().zip(&precond).map(|(ri, m)| m * ri).collect();
    let mut p = z.clone();
    let mut ap = vec![Vector3::zeros(); n];
    let mut rz = dot(&r, &z);
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return x;
    }
    for _ in 0..max_iter {
        a.matvec(stencil, &p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= tol * b_norm {
            break;
        }
        for i in 0..n {
            z[i] = precond[i] * r[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}
