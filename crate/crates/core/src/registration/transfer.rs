use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::ffd::{FfdJson, OctreeSplineFfd};
use super::rigid::RigidTransform;
use crate::error::{Error, Result};
use crate::geometry::{Frame, Point3};

pub const TRANSFER_FORMAT_VERSION: u32 = 1;

/// Default inversion tolerance in mm.
pub const INVERT_TOLERANCE_MM: f64 = 0.01;

const INVERT_MAX_ITERATIONS: usize = 100;

/// The map from TRUS to MRI coordinates: `f(p) = ffd(rigid(p))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferFunction {
    pub rigid: RigidTransform,
    pub ffd: OctreeSplineFfd,
    pub source_frame: Frame,
    pub target_frame: Frame,
}

impl TransferFunction {
    pub fn new(rigid: RigidTransform, ffd: OctreeSplineFfd) -> Self {
        TransferFunction {
            rigid,
            ffd,
            source_frame: Frame::Trus,
            target_frame: Frame::Mri,
        }
    }

    /// Rigid-only transfer (all deformation levels zero).
    pub fn rigid_only(rigid: RigidTransform) -> Self {
        let ffd = OctreeSplineFfd::new(
            Point3::new(-1.0, -1.0, -1.0),
            Point3::new(1.0, 1.0, 1.0),
            [1, 1, 1],
        )
        .expect("unit box is valid");
        TransferFunction::new(rigid, ffd)
    }

    pub fn identity() -> Self {
        TransferFunction::rigid_only(RigidTransform::identity())
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        let x = self.rigid.apply(p);
        x + self.ffd.displacement(&x)
    }

    /// Derivative of `f` at `p`.
    pub fn jacobian(&self, p: &Point3) -> Matrix3<f64> {
        let x = self.rigid.apply(p);
        (Matrix3::identity() + self.ffd.displacement_jacobian(&x)) * self.rigid.rotation.matrix()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::json("transfer function", e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// `f(p)`.
pub fn apply_transfer(f: &TransferFunction, p: &Point3) -> Point3 {
    f.apply(p)
}

/// Solves `f(p) = q` by damped Newton iteration started from `rigid⁻¹(q)`.
pub fn invert_point(f: &TransferFunction, q: &Point3, tol: f64) -> Result<Point3> {
    let inv = f.rigid.inverse();
    // iterate on x = rigid(p), where f reduces to x + d(x)
    let residual = |x: &Point3| x + f.ffd.displacement(x) - q;
    let mut x = *q;
    let mut r = residual(&x);
    let mut best = (r.norm(), x);
    for _ in 0..INVERT_MAX_ITERATIONS {
        if r.norm() <= tol {
            break;
        }
        let jac = Matrix3::identity() + f.ffd.displacement_jacobian(&x);
        let step = jac.try_inverse().map(|ji| -(ji * r)).unwrap_or(-r);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let cand = x + alpha * step;
            let rc = residual(&cand);
            if rc.norm() < r.norm() {
                x = cand;
                r = rc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            // fixed-point fallback
            x -= r;
            r = residual(&x);
        }
        if r.norm() < best.0 {
            best = (r.norm(), x);
        }
    }
    let p = inv.apply(&best.1);
    let err = (f.apply(&p) - q).norm();
    if err <= tol {
        Ok(p)
    } else {
        Err(Error::InversionFailure { residual: err })
    }
}

#[derive(Serialize, Deserialize)]
struct TransferJson {
    version: u32,
    source_frame: Frame,
    target_frame: Frame,
    rigid: RigidTransform,
    ffd: FfdJson,
}

impl Serialize for TransferFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TransferJson {
            version: TRANSFER_FORMAT_VERSION,
            source_frame: self.source_frame,
            target_frame: self.target_frame,
            rigid: self.rigid.clone(),
            ffd: FfdJson::from(&self.ffd),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TransferFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = TransferJson::deserialize(d)?;
        if j.version != TRANSFER_FORMAT_VERSION {
            return Err(serde::de::Error::custom(Error::UnsupportedVersion(
                j.version,
            )));
        }
        let ffd = OctreeSplineFfd::try_from(j.ffd).map_err(serde::de::Error::custom)?;
        Ok(TransferFunction {
            rigid: j.rigid,
            ffd,
            source_frame: j.source_frame,
            target_frame: j.target_frame,
        })
    }
}
