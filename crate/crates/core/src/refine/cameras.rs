use nalgebra::{DVector, Matrix3, Matrix3x2, Matrix3xX, Vector3};

use crate::geometry::{exp_so3, skew, CameraPose};

/// Parameter block of one camera inside a dense parameter vector.
#[derive(Debug, Clone, Copy, PartialEq)]
enum CameraParams {
    Fixed,
    /// `[rotation increment (3), translation (3)]`.
    Free(usize),
    /// `[rotation increment (3), tangent step (2)]`: the center stays on the
    /// sphere around camera 0, which pins the scale gauge.
    Anchor(usize),
}

/// Camera 0 is always fixed; the others are free, one of them optionally
/// acting as the scale anchor.
#[derive(Debug, Clone)]
pub(crate) struct CameraBlocks {
    params: Vec<CameraParams>,
    dim: usize,
}

/// First camera whose center differs from camera 0's.
pub(crate) fn first_distinct_center(cameras: &[CameraPose]) -> Option<usize> {
    let c0 = cameras.first()?.center();
    let tol = 1e-9 * (1.0 + c0.norm());
    (1..cameras.len()).find(|&i| (cameras[i].center() - c0).norm() > tol)
}

/// Orthonormal basis of the plane orthogonal to `u`.
fn tangent_basis(u: &Vector3<f64>) -> Matrix3x2<f64> {
    let u = u.normalize();
    let axis = if u.x.abs() <= u.y.abs() && u.x.abs() <= u.z.abs() {
        Vector3::x()
    } else if u.y.abs() <= u.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let b1 = u.cross(&axis).normalize();
    let b2 = u.cross(&b1);
    Matrix3x2::from_columns(&[b1, b2])
}

impl CameraBlocks {
    /// Lays out camera parameters from column `offset` on. With `free` unset
    /// every camera is fixed.
    pub fn new(num_cameras: usize, offset: usize, free: bool, anchor: Option<usize>) -> Self {
        let mut params = vec![CameraParams::Fixed; num_cameras];
        let mut dim = 0;
        if free {
            for (i, p) in params.iter_mut().enumerate().skip(1) {
                if Some(i) == anchor {
                    *p = CameraParams::Anchor(offset + dim);
                    dim += 5;
                } else {
                    *p = CameraParams::Free(offset + dim);
                    dim += 6;
                }
            }
        }
        Self { params, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes `d e / d camera` for a residual with `g = d e / d z`, where
    /// `z = R x + t` and `x` is the point in the camera-set frame.
    pub fn jacobian(
        &self,
        dense: &mut Matrix3xX<f64>,
        camera: usize,
        cameras: &[CameraPose],
        g: &Matrix3<f64>,
        x: &Vector3<f64>,
    ) {
        let cam = &cameras[camera];
        match self.params[camera] {
            CameraParams::Fixed => {}
            CameraParams::Free(off) => {
                let rotated = cam.rotation() * x;
                dense
                    .fixed_columns_mut::<3>(off)
                    .copy_from(&(-g * skew(&rotated)));
                dense.fixed_columns_mut::<3>(off + 3).copy_from(g);
            }
            CameraParams::Anchor(off) => {
                // z = R (x - c): rotation about the current center.
                let z = cam.transform_point(x);
                let basis = tangent_basis(&(cam.center() - cameras[0].center()));
                dense
                    .fixed_columns_mut::<3>(off)
                    .copy_from(&(-g * skew(&z)));
                dense
                    .fixed_columns_mut::<2>(off + 3)
                    .copy_from(&(-g * cam.rotation().matrix() * basis));
            }
        }
    }

    pub fn retract(&self, cameras: &mut [CameraPose], delta: &DVector<f64>) {
        let c0 = cameras[0].center();
        for (i, cam) in cameras.iter_mut().enumerate() {
            match self.params[i] {
                CameraParams::Fixed => {}
                CameraParams::Free(off) => {
                    let d = delta.fixed_rows::<6>(off);
                    let rotation = exp_so3(&d.fixed_rows::<3>(0).into_owned()) * cam.rotation();
                    let translation = cam.translation() + d.fixed_rows::<3>(3);
                    *cam = CameraPose::new(rotation, translation);
                }
                CameraParams::Anchor(off) => {
                    let d = delta.fixed_rows::<5>(off);
                    let rotation = exp_so3(&d.fixed_rows::<3>(0).into_owned()) * cam.rotation();
                    let u = cam.center() - c0;
                    let moved = u + tangent_basis(&u) * d.fixed_rows::<2>(3);
                    let center = c0 + moved * (u.norm() / moved.norm());
                    *cam = CameraPose::from_center(rotation, &center);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tangent_basis_is_orthonormal_and_orthogonal() {
        for u in [
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.3, -2.0, 0.7),
            Vector3::new(0.0, 0.0, -5.0),
        ] {
            let b = tangent_basis(&u);
            assert!(
                (b.transpose() * b - nalgebra::Matrix2::identity())
                    .abs()
                    .max()
                    < 1e-14
            );
            assert!((b.transpose() * u).abs().max() < 1e-14);
        }
    }

    #[test]
    fn anchor_retraction_keeps_distance() {
        let cams = [
            CameraPose::from_center(
                exp_so3(&Vector3::new(0.1, 0.0, 0.0)),
                &Vector3::new(1.0, 2.0, 3.0),
            ),
            CameraPose::from_center(
                exp_so3(&Vector3::new(0.0, 0.2, 0.0)),
                &Vector3::new(2.0, 2.5, 3.0),
            ),
        ];
        let blocks = CameraBlocks::new(2, 0, true, Some(1));
        assert_eq!(blocks.dim(), 5);
        let mut moved = cams;
        blocks.retract(
            &mut moved,
            &DVector::from_vec(vec![0.01, 0.02, 0.03, 0.4, -0.3]),
        );
        let before = (cams[1].center() - cams[0].center()).norm();
        let after = (moved[1].center() - moved[0].center()).norm();
        assert!((before - after).abs() < 1e-14);
        assert_eq!(moved[0], cams[0]);
    }
}
