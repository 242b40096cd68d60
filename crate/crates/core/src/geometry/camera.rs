use nalgebra::{Rotation3, Vector2, Vector3};

use super::{GeometryError, Sim3Transform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CameraModel {
    /// Equirectangular panorama: pixel offsets are linear in pan/tilt angles.
    Panoramic,
    /// Perspective camera: pixel offsets are tangents of pan/tilt angles.
    Rectilinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    model: CameraModel,
    focal: f64,
    principal_point: Vector2<f64>,
    image_size: [u32; 2],
}

impl CameraIntrinsics {
    pub fn new(
        model: CameraModel,
        focal: f64,
        principal_point: Vector2<f64>,
        image_size: [u32; 2],
    ) -> Result<Self, GeometryError> {
        if !(focal > 0.0) || !focal.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal must be positive, got {focal}"
            )));
        }
        if image_size[0] == 0 || image_size[1] == 0 {
            return Err(GeometryError::InvalidIntrinsics("empty image".into()));
        }
        if model == CameraModel::Rectilinear {
            let inside = (0..2).all(|i| {
                principal_point[i] >= 0.0 && principal_point[i] <= f64::from(image_size[i])
            });
            if !inside {
                return Err(GeometryError::InvalidIntrinsics(format!(
                    "principal point ({}, {}) outside the image",
                    principal_point.x, principal_point.y
                )));
            }
        }
        Ok(Self {
            model,
            focal,
            principal_point,
            image_size,
        })
    }

    /// Equirectangular panorama whose width spans a full turn, principal
    /// point at the image center.
    pub fn panoramic(width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(
            CameraModel::Panoramic,
            f64::from(width) / (2.0 * std::f64::consts::PI),
            Vector2::new(f64::from(width) / 2.0, f64::from(height) / 2.0),
            [width, height],
        )
    }

    /// Perspective camera with the principal point at the image center.
    pub fn rectilinear(focal: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        Self::new(
            CameraModel::Rectilinear,
            focal,
            Vector2::new(f64::from(width) / 2.0, f64::from(height) / 2.0),
            [width, height],
        )
    }

    pub fn model(&self) -> CameraModel {
        self.model
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn principal_point(&self) -> &Vector2<f64> {
        &self.principal_point
    }

    pub fn image_size(&self) -> [u32; 2] {
        self.image_size
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < f64::from(self.image_size[0])
            && pixel.y < f64::from(self.image_size[1])
    }
}

fn direction_from_angles(pan: f64, tilt: f64) -> Vector3<f64> {
    let (sp, cp) = pan.sin_cos();
    let (st, ct) = tilt.sin_cos();
    Vector3::new(ct * sp, st, ct * cp)
}

fn angles_from_direction(d: &Vector3<f64>) -> (f64, f64) {
    let n = d / d.norm();
    let tilt = n.y.clamp(-1.0, 1.0).asin();
    let pan = n.x.atan2(n.z);
    (pan, tilt)
}

/// Panorama calibration: pan and tilt are linear in the pixel offset.
pub fn calibrate_panoramic(pixel: &Vector2<f64>, intrinsics: &CameraIntrinsics) -> Vector3<f64> {
    let off = (pixel - intrinsics.principal_point) / intrinsics.focal;
    direction_from_angles(off.x, off.y)
}

/// Rectilinear calibration: pan and tilt are arctangents of the pixel offset.
pub fn calibrate_rectilinear(pixel: &Vector2<f64>, intrinsics: &CameraIntrinsics) -> Vector3<f64> {
    let off = (pixel - intrinsics.principal_point) / intrinsics.focal;
    direction_from_angles(off.x.atan(), off.y.atan())
}

/// Maps a pixel to its unit bearing in the camera frame.
pub fn calibrate(pixel: &Vector2<f64>, intrinsics: &CameraIntrinsics) -> Vector3<f64> {
    match intrinsics.model {
        CameraModel::Panoramic => calibrate_panoramic(pixel, intrinsics),
        CameraModel::Rectilinear => calibrate_rectilinear(pixel, intrinsics),
    }
}

/// Inverse of [`calibrate`].
pub fn uncalibrate(
    direction: &Vector3<f64>,
    intrinsics: &CameraIntrinsics,
) -> Result<Vector2<f64>, GeometryError> {
    if intrinsics.model == CameraModel::Rectilinear && direction.z <= 0.0 {
        return Err(GeometryError::BehindCamera { z: direction.z });
    }
    let (pan, tilt) = angles_from_direction(direction);
    let off = match intrinsics.model {
        CameraModel::Panoramic => Vector2::new(pan, tilt),
        CameraModel::Rectilinear => Vector2::new(pan.tan(), tilt.tan()),
    };
    Ok(intrinsics.principal_point + off * intrinsics.focal)
}

/// Camera projection `P = [R | t]` taking camera-set frame points into the
/// camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Rotation3::identity(), Vector3::zeros())
    }

    pub fn from_center(rotation: Rotation3<f64>, center: &Vector3<f64>) -> Self {
        Self::new(rotation, -(rotation * center))
    }

    /// Camera at `center` whose optical (+z) axis points at `target`.
    pub fn look_at(center: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Self {
        let z = (target - center).normalize();
        let mut x = up.cross(&z);
        if x.norm() < 1e-9 {
            x = Vector3::x().cross(&z);
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let m = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self::from_center(Rotation3::from_matrix_unchecked(m), center)
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Projection center `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Global pose of a camera whose local pose is `self`, once the local
    /// frame is registered by `transform` (global -> local).
    pub fn registered(&self, transform: &Sim3Transform) -> CameraPose {
        let rotation = self.rotation * transform.rotation();
        let center = transform.inverse().apply(&self.center());
        CameraPose::from_center(rotation, &center)
    }

    /// Bearing in the camera-set frame for a camera-frame bearing.
    pub fn bearing_to_frame(&self, bearing: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * bearing
    }
}

impl Default for CameraPose {
    fn default() -> Self {
        Self::identity()
    }
}
