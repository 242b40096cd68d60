//! Foundational geometry: rays, similarity transforms, camera models and the
//! ray reprojection residual shared by every solver.

mod camera;
mod transform;

pub use camera::{
    calibrate, calibrate_panoramic, calibrate_rectilinear, uncalibrate, CameraIntrinsics,
    CameraModel, CameraPose,
};
pub use transform::{exp_so3, rotation_angle, Sim3Transform};

use nalgebra::{Matrix3, Vector3, Vector4};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("direction is behind a rectilinear camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("point coincides with the camera center")]
    DegeneratePoint,
    #[error("ray direction has zero length")]
    ZeroDirection,
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid similarity transform: {0}")]
    InvalidTransform(String),
    #[error("homogeneous point has zero weight")]
    PointAtInfinity,
}

/// A bearing observation: unit direction leaving a projection center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    direction: Vector3<f64>,
    center: Vector3<f64>,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(direction: Vector3<f64>, center: Vector3<f64>) -> Result<Self, GeometryError> {
        let norm = direction.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(GeometryError::ZeroDirection);
        }
        Ok(Self {
            direction: direction / norm,
            center,
        })
    }

    /// Ray from `center` towards `target`.
    pub fn through(center: Vector3<f64>, target: &Vector3<f64>) -> Result<Self, GeometryError> {
        Self::new(target - center, center)
    }

    pub fn direction(&self) -> &Vector3<f64> {
        &self.direction
    }

    pub fn center(&self) -> &Vector3<f64> {
        &self.center
    }

    /// Point at signed distance `depth` along the ray.
    pub fn at(&self, depth: f64) -> Vector3<f64> {
        self.center + self.direction * depth
    }

    /// Angle in radians between this ray's direction and the direction from
    /// its center towards `point`.
    pub fn angle_to(&self, point: &Vector3<f64>) -> f64 {
        let d = point - self.center;
        let n = d.norm();
        if n == 0.0 {
            return std::f64::consts::PI;
        }
        angle_between_unit(&self.direction, &(d / n))
    }
}

/// Homogeneous 4-vector `(X; 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneousPoint {
    coords: Vector4<f64>,
}

impl HomogeneousPoint {
    pub fn from_euclidean(point: &Vector3<f64>) -> Self {
        Self {
            coords: point.push(1.0),
        }
    }

    /// Normalizes an arbitrary homogeneous 4-vector so its last component is 1.
    pub fn normalized(coords: Vector4<f64>) -> Result<Self, GeometryError> {
        let w = coords[3];
        if w == 0.0 || !w.is_finite() {
            return Err(GeometryError::PointAtInfinity);
        }
        let mut c = coords / w;
        c[3] = 1.0;
        Ok(Self { coords: c })
    }

    pub fn coords(&self) -> &Vector4<f64> {
        &self.coords
    }

    pub fn euclidean(&self) -> Vector3<f64> {
        self.coords.xyz()
    }
}

impl From<Vector3<f64>> for HomogeneousPoint {
    fn from(p: Vector3<f64>) -> Self {
        Self::from_euclidean(&p)
    }
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Ray reprojection residual `observed - P X / |P X|`.
///
/// `observed` is the unit bearing measured in the camera's own frame. The
/// scalar error is the Euclidean norm of the returned vector.
pub fn ray_residual(
    observed: &Vector3<f64>,
    camera: &CameraPose,
    point: &HomogeneousPoint,
) -> Result<Vector3<f64>, GeometryError> {
    let p = camera.transform_point(&point.euclidean());
    let n = p.norm();
    if n <= 1e-12 {
        return Err(GeometryError::DegeneratePoint);
    }
    Ok(observed - p / n)
}

/// Angle between two unit vectors, stable near 0 and pi.
pub fn angle_between_unit(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let cross = a.cross(b).norm();
    let dot = a.dot(b);
    cross.atan2(dot)
}
