use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Vector3};

/// `p ↦ R p + t`, with the rotation kept as an orthonormal matrix and
/// exchanged as an axis-angle vector plus the exact matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RigidParams", into = "RigidParams")]
pub struct RigidTransform {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3,
}

/// Serialized form: rotation vector (radians) and translation (mm). The
/// optional row-major matrix makes the round trip bit-exact.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RigidParams {
    pub rotation_vector: [f64; 3],
    pub translation: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<[[f64; 3]; 3]>,
}

impl TryFrom<RigidParams> for RigidTransform {
    type Error = Error;

    fn try_from(p: RigidParams) -> Result<Self> {
        let from_vector = RigidTransform::from_params(
            Vector3::from(p.rotation_vector),
            Vector3::from(p.translation),
        );
        let Some(m) = p.matrix else {
            return Ok(from_vector);
        };
        let m = Matrix3::from_fn(|i, j| m[i][j]);
        let t = RigidTransform {
            rotation: Rotation3::from_matrix_unchecked(m),
            translation: from_vector.translation,
        };
        if t.orthonormality_error() > 1e-9 || m.determinant() < 0.0 {
            return Err(Error::InvalidParameter(
                "rotation matrix is not a proper rotation".into(),
            ));
        }
        if (m - from_vector.rotation.matrix()).amax() > 1e-9 {
            return Err(Error::InvalidParameter(
                "rotation matrix disagrees with the rotation vector".into(),
            ));
        }
        Ok(t)
    }
}

impl From<RigidTransform> for RigidParams {
    fn from(t: RigidTransform) -> Self {
        let m = t.rotation.matrix();
        RigidParams {
            rotation_vector: t.rotation.scaled_axis().into(),
            translation: t.translation.into(),
            matrix: Some(std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))),
        }
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3) -> Self {
        RigidTransform {
            rotation: Rotation3::identity(),
            translation: t,
        }
    }

    pub fn from_params(rotation_vector: Vector3, translation: Vector3) -> Self {
        RigidTransform {
            rotation: Rotation3::from_scaled_axis(rotation_vector),
            translation,
        }
    }

    /// Rotation by `rotation` about `center`, followed by `shift`.
    pub fn about(center: &Point3, rotation: Rotation3<f64>, shift: Vector3) -> Self {
        let translation = center.coords - rotation * center.coords + shift;
        RigidTransform {
            rotation,
            translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        RigidTransform {
            translation: -(rotation * self.translation),
            rotation,
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn rotation_vector(&self) -> Vector3 {
        self.rotation.scaled_axis()
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let m = self.rotation.matrix();
        let gram = m.transpose() * m - nalgebra::Matrix3::identity();
        gram.amax().max((m.determinant() - 1.0).abs())
    }
}
