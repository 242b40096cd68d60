use nalgebra::{Matrix3, Matrix3x4, Rotation3, UnitQuaternion, Vector3};

use super::GeometryError;

/// Rotation from an axis-angle vector (exponential map of so(3)).
pub fn exp_so3(omega: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::new(*omega)
}

/// Angle in radians of the relative rotation `a * b^T`.
pub fn rotation_angle(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    let q = UnitQuaternion::from_rotation_matrix(&(a * b.inverse()));
    2.0 * q.imag().norm().atan2(q.w.abs())
}

/// 7-DOF similarity `T = s R [I | -C]` acting on global points:
/// `apply(X) = s R (X - C)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3Transform {
    scale: f64,
    rotation: Rotation3<f64>,
    center: Vector3<f64>,
}

impl Sim3Transform {
    pub fn new(
        scale: f64,
        rotation: Rotation3<f64>,
        center: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(GeometryError::InvalidTransform(format!(
                "scale must be positive, got {scale}"
            )));
        }
        if !center.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidTransform("non-finite center".into()));
        }
        let m = rotation.matrix();
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if !(ortho <= 1e-10) || !((det - 1.0).abs() <= 1e-10) {
            return Err(GeometryError::InvalidTransform(format!(
                "rotation not orthonormal (err {ortho:e}, det {det})"
            )));
        }
        Ok(Self {
            scale,
            rotation,
            center,
        })
    }

    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Rotation3::identity(),
            center: Vector3::zeros(),
        }
    }

    /// From the `s [R | t]` form, where `t = -R C`.
    pub fn from_scaled_pose(
        scale: f64,
        rotation: Rotation3<f64>,
        translation: &Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let center = -(rotation.inverse() * translation);
        Self::new(scale, rotation, center)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    /// Position of the local frame origin expressed in global coordinates.
    pub fn center(&self) -> &Vector3<f64> {
        &self.center
    }

    /// The translation `t = -R C` of the `s [R | t]` form.
    pub fn translation(&self) -> Vector3<f64> {
        -(self.rotation * self.center)
    }

    /// The 3x4 matrix `s R [I | -C]`.
    pub fn as_matrix(&self) -> Matrix3x4<f64> {
        let sr = self.rotation.matrix() * self.scale;
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&sr);
        m.set_column(3, &(-(sr * self.center)));
        m
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        (self.rotation * (x - self.center)) * self.scale
    }

    pub fn inverse(&self) -> Self {
        Self {
            scale: 1.0 / self.scale,
            rotation: self.rotation.inverse(),
            center: -(self.rotation * self.center) * self.scale,
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            center: other.center + other.rotation.inverse() * self.center / other.scale,
        }
    }

    /// Builds without validation; callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(
        scale: f64,
        rotation: Rotation3<f64>,
        center: Vector3<f64>,
    ) -> Self {
        Self {
            scale,
            rotation,
            center,
        }
    }
}

impl Default for Sim3Transform {
    fn default() -> Self {
        Self::identity()
    }
}
