//! Synthetic prostate-like phantom with a known TRUS → MRI mapping.
//!
//! The organ is an ellipsoid centred on the TRUS origin. The true mapping
//! is a Gaussian radial bump on the surface followed by a small rigid
//! motion; the sparse source samples axial rings like a TRUS sweep and the
//! dense target covers the whole deformed surface.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::RigidTransform;
use crate::error::{Error, Result};
use crate::geometry::{Frame, Point3, Provenance, SurfaceModel, Vector3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    /// Peak surface displacement of the bump (mm).
    pub amplitude_mm: f64,
    /// Standard deviation of the isotropic sampling noise (mm).
    pub noise_mm: f64,
    pub ring_spacing_mm: f64,
    pub ring_points: usize,
    pub dense_points: usize,
    pub landmarks: usize,
}

impl PhantomSpec {
    pub fn new(seed: u64, amplitude_mm: f64, noise_mm: f64) -> Self {
        PhantomSpec {
            seed,
            amplitude_mm,
            noise_mm,
            ring_spacing_mm: 5.0,
            ring_points: 32,
            dense_points: 2500,
            landmarks: 9,
        }
    }
}

/// Known mapping `g(p) = rigid(p + bump(p))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub semi_axes: [f64; 3],
    pub bump_center: Point3,
    pub bump_direction: Vector3,
    pub amplitude_mm: f64,
    pub width_mm: f64,
    pub rigid: RigidTransform,
}

impl GroundTruth {
    pub fn bump(&self, p: &Point3) -> Vector3 {
        let r2 = (p - self.bump_center).norm_squared();
        self.bump_direction
            * (self.amplitude_mm * (-r2 / (2.0 * self.width_mm * self.width_mm)).exp())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rigid.apply(&(p + self.bump(p)))
    }

    /// Newton inversion of the bump; converges since its gradient stays below one.
    pub fn invert(&self, q: &Point3) -> Point3 {
        let y = self.rigid.inverse().apply(q);
        let mut p = y;
        for _ in 0..50 {
            let r = p + self.bump(&p) - y;
            if r.norm() < 1e-12 {
                break;
            }
            let b = self.bump(&p);
            let grad_scalar = -(p - self.bump_center) / (self.width_mm * self.width_mm);
            let jac = Matrix3::identity() + b * grad_scalar.transpose();
            let step = jac.try_inverse().map(|j| j * r).unwrap_or(r);
            p -= step;
        }
        p
    }

    /// Signed implicit value of the undeformed ellipsoid (< 0 inside).
    pub fn ellipsoid_level(&self, p: &Point3) -> f64 {
        let [a, b, c] = self.semi_axes;
        (p.x / a).powi(2) + (p.y / b).powi(2) + (p.z / c).powi(2) - 1.0
    }

    /// Whether an MRI-frame point lies inside the deformed organ.
    pub fn contains_mri(&self, q: &Point3) -> bool {
        self.ellipsoid_level(&self.invert(q)) < 0.0
    }
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub source: SurfaceModel,
    pub target: SurfaceModel,
    pub source_landmarks: Vec<Point3>,
    pub target_landmarks: Vec<Point3>,
    pub truth: GroundTruth,
    /// Undeformed dense surface samples (TRUS frame), before noise.
    pub reference_surface: Vec<Point3>,
}

/// Points of the axial ring at height `z` of an ellipsoid.
pub(crate) fn ellipse_ring(semi: [f64; 3], z: f64, n: usize, phase: f64) -> Vec<Point3> {
    let s = (1.0 - (z / semi[2]).powi(2)).max(0.0).sqrt();
    (0..n)
        .map(|j| {
            let t = phase + 2.0 * PI * j as f64 / n as f64;
            Point3::new(semi[0] * s * t.cos(), semi[1] * s * t.sin(), z)
        })
        .collect()
}

/// Fibonacci lattice mapped onto the ellipsoid.
pub(crate) fn dense_ellipsoid(semi: [f64; 3], n: usize) -> Vec<Point3> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            Point3::new(semi[0] * r * t.cos(), semi[1] * r * t.sin(), semi[2] * z)
        })
        .collect()
}

/// Deterministic phantom for a seed.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    if !(spec.amplitude_mm >= 0.0) || !(spec.noise_mm >= 0.0) {
        return Err(Error::InvalidParameter(
            "phantom amplitude and noise must be non-negative".into(),
        ));
    }
    if spec.ring_points < 3 || spec.dense_points == 0 || !(spec.ring_spacing_mm > 0.0) {
        return Err(Error::InvalidParameter(
            "phantom sampling is too sparse".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let semi = [
        rng.random_range(15.0..25.0),
        rng.random_range(15.0..25.0),
        rng.random_range(15.0..25.0),
    ];

    // bump centred on a random surface point, pushing radially
    let theta = rng.random_range(0.0..2.0 * PI);
    let cos_phi: f64 = rng.random_range(-0.8..0.8);
    let sin_phi = (1.0 - cos_phi * cos_phi).sqrt();
    let bump_center = Point3::new(
        semi[0] * sin_phi * theta.cos(),
        semi[1] * sin_phi * theta.sin(),
        semi[2] * cos_phi,
    );
    let bump_direction = bump_center.coords.normalize();

    let axis = Unit::new_normalize(Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ));
    let angle = rng.random_range(0.0..5f64.to_radians());
    let shift = Vector3::new(
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
        rng.random_range(-5.0..5.0),
    );
    let truth = GroundTruth {
        semi_axes: semi,
        bump_center,
        bump_direction,
        amplitude_mm: spec.amplitude_mm,
        width_mm: 10.0,
        rigid: RigidTransform {
            rotation: Rotation3::from_axis_angle(&axis, angle),
            translation: shift,
        },
    };

    let noise = Normal::new(0.0, spec.noise_mm.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let jitter = |p: Point3, rng: &mut ChaCha8Rng| {
        if spec.noise_mm == 0.0 {
            p
        } else {
            p + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
        }
    };

    let max_ring = ((semi[2] - 1.0) / spec.ring_spacing_mm).floor() as i64;
    let mut source_pts = Vec::new();
    for k in -max_ring..=max_ring {
        let z = k as f64 * spec.ring_spacing_mm;
        let phase = rng.random_range(0.0..2.0 * PI / spec.ring_points as f64);
        for p in ellipse_ring(semi, z, spec.ring_points, phase) {
            source_pts.push(jitter(p, &mut rng));
        }
    }

    let reference_surface = dense_ellipsoid(semi, spec.dense_points);
    let target_pts: Vec<Point3> = reference_surface
        .iter()
        .map(|p| truth.apply(p))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|p| jitter(p, &mut rng))
        .collect();

    let n_lm = spec.landmarks.max(1);
    let source_landmarks: Vec<Point3> = (0..n_lm)
        .map(|i| {
            let t = if n_lm == 1 {
                0.5
            } else {
                i as f64 / (n_lm - 1) as f64
            };
            Point3::new(0.0, -0.15 * semi[1], semi[2] * (-0.6 + 1.2 * t))
        })
        .collect();
    let target_landmarks = source_landmarks.iter().map(|p| truth.apply(p)).collect();

    Ok(Phantom {
        source: SurfaceModel::with_provenance(Frame::Trus, source_pts, Provenance::Axial),
        target: SurfaceModel::new(Frame::Mri, target_pts),
        source_landmarks,
        target_landmarks,
        truth,
        reference_surface,
    })
}
