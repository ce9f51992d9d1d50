//! Surface registration: centroid pre-alignment, rigid Levenberg–Marquardt
//! refinement and a regularized hierarchical free-form deformation.
//!
//! The cost is the sum of squared point-to-surface distances from the mapped
//! source samples to the target cloud. The elastic stage adds a membrane
//! penalty `λ Σ |c_a − c_b|²` over face-neighbouring control points of the
//! level being optimized; control points outside the lattice and on inactive
//! cells count as fixed zero neighbours, so a very large `λ` pins the
//! deformation to zero.

mod ffd;
pub(crate) mod phantom;
mod rigid;
mod solver;
mod surface;
mod transfer;

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{centroid, KdTree, Point3, SurfaceModel, Vector3};

pub use ffd::{Lattice, OctreeSplineFfd};
pub use phantom::{generate_phantom, GroundTruth, Phantom, PhantomSpec};
pub use rigid::{RigidParams, RigidTransform};
pub use surface::SurfaceDistance;
pub use transfer::{
    apply_transfer, invert_point, TransferFunction, INVERT_TOLERANCE_MM, TRANSFER_FORMAT_VERSION,
};

use solver::{pcg, slot, BlockMatrix, Stencil, CENTER, NONE};

/// Tuning knobs of the registration. All values must be positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    /// Number of octree levels.
    pub levels: usize,
    /// Membrane regularization weight (mm² cost units).
    pub lambda: f64,
    pub damping_init: f64,
    /// Factor applied to the damping after a rejected (×) or accepted (÷) step.
    pub damping_decay: f64,
    /// LM iterations per stage / level.
    pub max_iterations: usize,
    /// Relative cost decrease below which a stage has converged.
    pub tolerance: f64,
    /// A cell subdivides when its mean residual exceeds this multiple of the global mean.
    pub subdivision_factor: f64,
    /// Cells per axis of the coarsest lattice.
    pub base_cells: usize,
    /// Padding of the deformation root box around the source points.
    pub ffd_margin_mm: f64,
    pub field_spacing_mm: f64,
    pub field_margin_mm: f64,
    /// Below this interpolated distance the exact nearest sample is used.
    pub exact_below_mm: f64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            levels: 3,
            lambda: 0.1,
            damping_init: 1e-3,
            damping_decay: 10.0,
            max_iterations: 50,
            tolerance: 1e-6,
            subdivision_factor: 1.5,
            base_cells: 2,
            ffd_margin_mm: 10.0,
            field_spacing_mm: 1.0,
            field_margin_mm: 10.0,
            exact_below_mm: 1.0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("lambda", self.lambda),
            ("damping_init", self.damping_init),
            ("damping_decay", self.damping_decay),
            ("tolerance", self.tolerance),
            ("subdivision_factor", self.subdivision_factor),
            ("ffd_margin_mm", self.ffd_margin_mm),
            ("field_spacing_mm", self.field_spacing_mm),
            ("field_margin_mm", self.field_margin_mm),
            ("exact_below_mm", self.exact_below_mm),
        ];
        for (name, v) in reals {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.damping_decay <= 1.0 {
            return Err(Error::InvalidParameter(
                "damping_decay must exceed 1".into(),
            ));
        }
        for (name, v) in [
            ("levels", self.levels),
            ("max_iterations", self.max_iterations),
            ("base_cells", self.base_cells),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Mean, sample standard deviation and maximum of a set of distances (mm).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub mean: f64,
    pub sd: f64,
    pub max: f64,
    pub count: usize,
}

impl DistanceStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("no distances"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(DistanceStats {
            mean,
            sd,
            max,
            count: values.len(),
        })
    }
}

/// Outcome of the rigid stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RigidFit {
    pub transform: RigidTransform,
    pub converged: bool,
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub transfer: TransferFunction,
    pub residual: DistanceStats,
    /// Residual of the rigid initialization alone.
    pub rigid_residual: DistanceStats,
    pub iterations_per_level: Vec<usize>,
    /// Accepted-step costs of each optimized level.
    pub cost_history: Vec<Vec<f64>>,
    pub final_cost: f64,
    pub converged: bool,
}

/// Centroid superposition: identity rotation, translation between centroids.
pub fn pre_register(source: &SurfaceModel, target: &SurfaceModel) -> Result<RigidTransform> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput(
            "pre-registration needs two non-empty surfaces",
        ));
    }
    let cs = centroid(&source.points)?;
    let ct = centroid(&target.points)?;
    Ok(RigidTransform::from_translation(ct - cs))
}

/// Source points in a canonical order so results do not depend on input order.
fn canonical_points(source: &SurfaceModel) -> Result<Vec<Point3>> {
    if source.is_empty() {
        return Err(Error::EmptyInput("source surface is empty"));
    }
    if source
        .points
        .iter()
        .any(|p| !p.coords.iter().all(|c| c.is_finite()))
    {
        return Err(Error::InvalidParameter(
            "source surface has non-finite points".into(),
        ));
    }
    let mut pts = source.points.clone();
    pts.sort_by(|a, b| {
        a.x.total_cmp(&b.x)
            .then(a.y.total_cmp(&b.y))
            .then(a.z.total_cmp(&b.z))
    });
    Ok(pts)
}

fn prepare_target(target: &SurfaceModel, cfg: &RegistrationConfig) -> Result<SurfaceDistance> {
    SurfaceDistance::new(
        target,
        cfg.field_spacing_mm,
        cfg.field_margin_mm,
        cfg.exact_below_mm,
    )
}

/// Six-parameter LM refinement of `init`.
pub fn rigid_register(
    source: &SurfaceModel,
    target: &SurfaceModel,
    init: &RigidTransform,
    cfg: &RegistrationConfig,
) -> Result<RigidFit> {
    cfg.validate()?;
    let pts = canonical_points(source)?;
    let dist = prepare_target(target, cfg)?;
    Ok(rigid_lm(&pts, &dist, init, cfg))
}

fn rigid_cost(pts: &[Point3], dist: &SurfaceDistance, t: &RigidTransform) -> f64 {
    pts.iter().map(|p| dist.query(&t.apply(p)).0.powi(2)).sum()
}

fn rigid_lm(
    pts: &[Point3],
    dist: &SurfaceDistance,
    init: &RigidTransform,
    cfg: &RegistrationConfig,
) -> RigidFit {
    let mut t = init.clone();
    let mut cost = rigid_cost(pts, dist, &t);
    let mut history = vec![cost];
    let mut mu = cfg.damping_init;
    let mut iterations = 0;
    let mut converged = cost == 0.0;
    let mut system: Option<(Matrix6<f64>, Vector6<f64>, Point3)> = None;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let (a, b, c) = system.get_or_insert_with(|| {
            let q: Vec<Point3> = pts.iter().map(|p| t.apply(p)).collect();
            let c = centroid(&q).expect("non-empty");
            let mut a = Matrix6::zeros();
            let mut b = Vector6::zeros();
            for qi in &q {
                let (r, g) = dist.query(qi);
                let arm = (qi - c).cross(&g);
                let j = Vector6::new(arm.x, arm.y, arm.z, g.x, g.y, g.z);
                a += j * j.transpose();
                b += j * r;
            }
            (a, b, c)
        });
        let mut damped = *a;
        for i in 0..6 {
            damped[(i, i)] += mu * a[(i, i)].max(1e-12);
        }
        let Some(chol) = damped.cholesky() else {
            mu *= cfg.damping_decay;
            continue;
        };
        let delta = chol.solve(&(-*b));
        let step = RigidTransform::about(
            c,
            Rotation3::from_scaled_axis(Vector3::new(delta[0], delta[1], delta[2])),
            Vector3::new(delta[3], delta[4], delta[5]),
        );
        let cand = step.compose(&t);
        let cand_cost = rigid_cost(pts, dist, &cand);
        if cand_cost < cost {
            let rel = (cost - cand_cost) / cost;
            t = cand;
            cost = cand_cost;
            history.push(cost);
            mu = (mu / cfg.damping_decay).max(1e-12);
            system = None;
            if rel < cfg.tolerance || cost == 0.0 || delta.norm() < 1e-12 {
                converged = true;
            }
        } else {
            mu *= cfg.damping_decay;
            if mu > 1e12 {
                // no descent direction left
                converged = true;
            }
        }
    }
    RigidFit {
        transform: t,
        converged,
        iterations,
        cost_history: history,
    }
}

fn exact_residuals(
    pts: &[Point3],
    dist: &SurfaceDistance,
    map: impl Fn(&Point3) -> Point3,
) -> Vec<f64> {
    pts.iter().map(|p| dist.exact(&map(p))).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Coarse-to-fine elastic refinement on top of a rigid initialization.
pub fn elastic_register(
    source: &SurfaceModel,
    target: &SurfaceModel,
    init: &RigidTransform,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let pts = canonical_points(source)?;
    let dist = prepare_target(target, cfg)?;
    elastic_stage(&pts, &dist, init, cfg)
}

/// Pre-registration, rigid and elastic stages in sequence.
pub fn register(
    source: &SurfaceModel,
    target: &SurfaceModel,
    cfg: &RegistrationConfig,
) -> Result<(RigidFit, RegistrationResult)> {
    cfg.validate()?;
    let init = pre_register(source, target)?;
    let pts = canonical_points(source)?;
    let dist = prepare_target(target, cfg)?;
    let rigid = rigid_lm(&pts, &dist, &init, cfg);
    let elastic = elastic_stage(&pts, &dist, &rigid.transform, cfg)?;
    Ok((rigid, elastic))
}

fn elastic_stage(
    pts: &[Point3],
    dist: &SurfaceDistance,
    init: &RigidTransform,
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    let x: Vec<Point3> = pts.iter().map(|p| init.apply(p)).collect();
    let (mut lo, mut hi) = (x[0], x[0]);
    for p in &x {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let margin = Vector3::repeat(cfg.ffd_margin_mm);
    let mut ffd = OctreeSplineFfd::new(lo - margin, hi + margin, [cfg.base_cells; 3])?;

    let rigid_res = exact_residuals(&x, dist, |p| *p);
    let rigid_residual = DistanceStats::from_values(&rigid_res)?;
    let mut current = rigid_res;
    let mut iterations_per_level = Vec::new();
    let mut cost_history = Vec::new();
    let mut converged = true;
    let mut final_cost: f64 = current.iter().map(|d| d * d).sum();

    for level in 0..cfg.levels {
        if level > 0 {
            if !ffd.levels[level - 1].subdivided.iter().any(|&s| s) {
                break;
            }
            ffd.push_level();
        }
        let base: Vec<Point3> = x
            .iter()
            .map(|p| p + ffd.displacement_upto(p, level))
            .collect();
        let trace = optimize_level(&mut ffd, level, &x, &base, dist, cfg);

        let after = exact_residuals(&x, dist, |p| p + ffd.displacement(p));
        if mean(&after) > mean(&current) {
            // level made the surface fit worse; drop it and stop refining
            for d in &mut ffd.levels[level].displacements {
                *d = Vector3::zeros();
            }
            iterations_per_level.push(trace.iterations);
            cost_history.push(trace.costs);
            break;
        }
        converged &= trace.converged;
        final_cost = *trace.costs.last().expect("initial cost recorded");
        iterations_per_level.push(trace.iterations);
        cost_history.push(trace.costs);
        current = after;

        if level + 1 < cfg.levels {
            mark_subdivisions(&mut ffd, level, &x, &current, cfg.subdivision_factor);
        }
    }

    let transfer = TransferFunction::new(init.clone(), ffd);
    Ok(RegistrationResult {
        residual: DistanceStats::from_values(&current)?,
        rigid_residual,
        transfer,
        iterations_per_level,
        cost_history,
        final_cost,
        converged,
    })
}

fn mark_subdivisions(
    ffd: &mut OctreeSplineFfd,
    level: usize,
    x: &[Point3],
    residuals: &[f64],
    factor: f64,
) {
    let global = mean(residuals);
    let n_cells = ffd.levels[level].cell_count();
    let mut sum = vec![0.0; n_cells];
    let mut count = vec![0usize; n_cells];
    for (p, r) in x.iter().zip(residuals) {
        let loc = ffd.locate(level, p);
        let c = ffd.levels[level].cell_index(loc.cell[0], loc.cell[1], loc.cell[2]);
        sum[c] += r;
        count[c] += 1;
    }
    let lattice = &mut ffd.levels[level];
    for c in 0..n_cells {
        lattice.subdivided[c] = lattice.active[c]
            && count[c] > 0
            && global > 0.0
            && sum[c] / count[c] as f64 > factor * global;
    }
}

struct LevelTrace {
    costs: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Per-point corner unknowns and weights at the level being optimized.
struct PointStencil {
    free: [u32; 8],
    weight: [f64; 8],
}

fn membrane(stencil: &Stencil, c: &[Vector3]) -> f64 {
    let mut acc = 0.0;
    for (a, row) in stencil.neighbors.iter().enumerate() {
        for s in Stencil::face_slots() {
            let b = row[s];
            if b == NONE {
                acc += c[a].norm_squared();
            } else if (b as usize) > a {
                acc += (c[a] - c[b as usize]).norm_squared();
            }
        }
    }
    acc
}

fn mapped(base: &Point3, ps: &PointStencil, c: &[Vector3]) -> Point3 {
    let mut q = *base;
    for k in 0..8 {
        if ps.free[k] != NONE {
            q += ps.weight[k] * c[ps.free[k] as usize];
        }
    }
    q
}

fn level_cost(
    base: &[Point3],
    stencils: &[PointStencil],
    stencil: &Stencil,
    c: &[Vector3],
    dist: &SurfaceDistance,
    lambda: f64,
) -> f64 {
    let data: f64 = base
        .iter()
        .zip(stencils)
        .map(|(b, ps)| dist.query(&mapped(b, ps, c)).0.powi(2))
        .sum();
    data + lambda * membrane(stencil, c)
}

fn corner_offset(c1: usize, c2: usize) -> usize {
    let bit = |c: usize, b: usize| ((c >> b) & 1) as isize;
    slot([
        bit(c2, 0) - bit(c1, 0),
        bit(c2, 1) - bit(c1, 1),
        bit(c2, 2) - bit(c1, 2),
    ])
}

fn optimize_level(
    ffd: &mut OctreeSplineFfd,
    level: usize,
    x: &[Point3],
    base: &[Point3],
    dist: &SurfaceDistance,
    cfg: &RegistrationConfig,
) -> LevelTrace {
    let stencil = Stencil::new(&ffd.levels[level]);
    let n = stencil.len();
    let stencils: Vec<PointStencil> = x
        .iter()
        .map(|p| {
            let loc = ffd.locate(level, p);
            let idx = loc.corner_indices(&ffd.levels[level]);
            PointStencil {
                free: idx.map(|i| stencil.free_of[i]),
                weight: loc.weights(),
            }
        })
        .collect();
    let mut c: Vec<Vector3> = stencil
        .free
        .iter()
        .map(|&p| ffd.levels[level].displacements[p])
        .collect();

    let lambda = cfg.lambda;
    let mut cost = level_cost(base, &stencils, &stencil, &c, dist, lambda);
    let mut costs = vec![cost];
    let mut mu = cfg.damping_init;
    let mut iterations = 0;
    let mut converged = n == 0 || cost == 0.0;
    let mut system: Option<(BlockMatrix, Vec<Vector3>)> = None;

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        let (a, b) = system.get_or_insert_with(|| {
            let mut a = BlockMatrix::zeros(n);
            let mut b = vec![Vector3::zeros(); n];
            for (bp, ps) in base.iter().zip(&stencils) {
                let (r, g) = dist.query(&mapped(bp, ps, &c));
                let ggt = g * g.transpose();
                for k1 in 0..8 {
                    let fa = ps.free[k1];
                    if fa == NONE || ps.weight[k1] == 0.0 {
                        continue;
                    }
                    b[fa as usize] += r * ps.weight[k1] * g;
                    for k2 in 0..8 {
                        if ps.free[k2] == NONE || ps.weight[k2] == 0.0 {
                            continue;
                        }
                        a.blocks[fa as usize][corner_offset(k1, k2)] +=
                            ps.weight[k1] * ps.weight[k2] * ggt;
                    }
                }
            }
            for (ai, row) in stencil.neighbors.iter().enumerate() {
                a.blocks[ai][CENTER] += Matrix3::identity() * (6.0 * lambda);
                let mut lap = 6.0 * c[ai];
                for s in Stencil::face_slots() {
                    let nb = row[s];
                    if nb != NONE {
                        a.blocks[ai][s] -= Matrix3::identity() * lambda;
                        lap -= c[nb as usize];
                    }
                }
                b[ai] += lambda * lap;
            }
            (a, b)
        });

        let mut damped = BlockMatrix {
            blocks: a.blocks.clone(),
        };
        for row in &mut damped.blocks {
            for d in 0..3 {
                let v = row[CENTER][(d, d)];
                row[CENTER][(d, d)] = v + mu * v;
            }
        }
        let rhs: Vec<Vector3> = b.iter().map(|v| -v).collect();
        let delta = pcg(&damped, &stencil, &rhs, 1e-10, 4 * 3 * n + 50);
        let cand: Vec<Vector3> = c.iter().zip(&delta).map(|(ci, di)| ci + di).collect();
        let cand_cost = level_cost(base, &stencils, &stencil, &cand, dist, lambda);
        if cand_cost < cost {
            let rel = (cost - cand_cost) / cost;
            c = cand;
            cost = cand_cost;
            costs.push(cost);
            mu = (mu / cfg.damping_decay).max(1e-12);
            system = None;
            if rel < cfg.tolerance || cost == 0.0 {
                converged = true;
            }
        } else {
            mu *= cfg.damping_decay;
            if mu > 1e12 {
                converged = true;
            }
        }
    }

    let lattice = &mut ffd.levels[level];
    for (f, &p) in stencil.free.iter().enumerate() {
        lattice.displacements[p] = c[f];
    }
    LevelTrace {
        costs,
        iterations,
        converged,
    }
}

/// Distances from every mapped source point to its nearest target sample.
pub fn residual_surface_distance(
    f: &TransferFunction,
    source: &SurfaceModel,
    target: &SurfaceModel,
) -> Result<DistanceStats> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput(
            "residual distance needs two non-empty surfaces",
        ));
    }
    let tree = KdTree::new(&target.points);
    let d: Vec<f64> = source
        .points
        .iter()
        .map(|p| tree.nearest(&f.apply(p)).expect("non-empty").1)
        .collect();
    DistanceStats::from_values(&d)
}

/// Distances between mapped source landmarks and their true positions.
pub fn target_registration_error(
    f: &TransferFunction,
    source_landmarks: &[Point3],
    target_landmarks: &[Point3],
) -> Result<DistanceStats> {
    if source_landmarks.len() != target_landmarks.len() {
        return Err(Error::LengthMismatch {
            left: source_landmarks.len(),
            right: target_landmarks.len(),
        });
    }
    let d: Vec<f64> = source_landmarks
        .iter()
        .zip(target_landmarks)
        .map(|(s, t)| (f.apply(s) - t).norm())
        .collect();
    DistanceStats::from_values(&d)
}
