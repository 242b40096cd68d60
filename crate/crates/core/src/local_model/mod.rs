//! Building blocks of the camera-set reconstruction: linear ray
//! triangulation and bundle adjustment by ray reprojection error.

use std::collections::BTreeSet;

use nalgebra::{DVector, Matrix3, Matrix3xX, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{
    angle_between_unit, calibrate, ray_residual, CameraIntrinsics, CameraPose, GeometryError,
    HomogeneousPoint, Ray,
};
use crate::matcher::{Descriptor, LocalPoint};
use crate::refine::{
    compare_jacobians, minimize, residual_wrt_projection, CameraBlocks, JacobianComparison,
    LmConfig, LmOutcome, LmProblem, RefineError, ResidualBlock, Termination,
};

pub const DEFAULT_MIN_TRIANGULATION_ANGLE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalModelError {
    #[error("need at least 2 rays, got {0}")]
    TooFewRays(usize),
    #[error("rays are nearly parallel (max pairwise angle {max_angle:e} rad)")]
    DegenerateRays { max_angle: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Refine(#[from] RefineError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub point: Vector3<f64>,
    /// Set when the point lies at negative depth on at least one ray.
    pub behind: bool,
}

/// Point minimizing the summed squared orthogonal distance to all rays,
/// from the 3x3 system `sum (I - d d^T) X = sum (I - d d^T) c`.
pub fn triangulate(rays: &[Ray], min_angle: f64) -> Result<Triangulation, LocalModelError> {
    if rays.len() < 2 {
        return Err(LocalModelError::TooFewRays(rays.len()));
    }
    let mut max_angle: f64 = 0.0;
    for (i, a) in rays.iter().enumerate() {
        for b in &rays[i + 1..] {
            max_angle = max_angle.max(angle_between_unit(a.direction(), b.direction()));
        }
    }
    if !(max_angle >= min_angle) {
        return Err(LocalModelError::DegenerateRays { max_angle });
    }
    let mut a = Matrix3::zeros();
    let mut b = Vector3::zeros();
    for r in rays {
        let d = r.direction();
        let p = Matrix3::identity() - d * d.transpose();
        a += p;
        b += p * r.center();
    }
    let point = a
        .cholesky()
        .map(|c| c.solve(&b))
        .ok_or(LocalModelError::DegenerateRays { max_angle })?;
    let behind = rays
        .iter()
        .any(|r| r.direction().dot(&(point - r.center())) < 0.0);
    Ok(Triangulation { point, behind })
}

/// A pixel measurement of a local point, optionally with the feature
/// descriptor extracted there.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelObservation {
    pub camera: usize,
    pub point: usize,
    pub pixel: Vector2<f64>,
    pub descriptor: Option<Descriptor>,
}

/// Cameras and points reconstructed in the camera-set frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraSetModel {
    pub cameras: Vec<(CameraIntrinsics, CameraPose)>,
    pub points: Vec<Vector3<f64>>,
    pub observations: Vec<PixelObservation>,
    /// The camera whose global pose the pipeline reports.
    pub target_camera: usize,
}

impl CameraSetModel {
    pub fn validate(&self) -> Result<(), LocalModelError> {
        if self.cameras.is_empty() {
            return Err(LocalModelError::InvalidModel("no cameras".into()));
        }
        if self.target_camera >= self.cameras.len() {
            return Err(LocalModelError::InvalidModel(format!(
                "target camera {} out of {}",
                self.target_camera,
                self.cameras.len()
            )));
        }
        let mut seen_by = vec![BTreeSet::new(); self.points.len()];
        for (k, o) in self.observations.iter().enumerate() {
            if o.camera >= self.cameras.len() || o.point >= self.points.len() {
                return Err(LocalModelError::InvalidModel(format!(
                    "observation {k} references camera {} / point {} out of range",
                    o.camera, o.point
                )));
            }
            seen_by[o.point].insert(o.camera);
        }
        if let Some(j) = seen_by.iter().position(|s| s.len() < 2) {
            return Err(LocalModelError::InvalidModel(format!(
                "point {j} is observed by fewer than 2 cameras"
            )));
        }
        Ok(())
    }

    pub fn poses(&self) -> Vec<CameraPose> {
        self.cameras.iter().map(|(_, p)| *p).collect()
    }

    /// Unit bearing of each observation in its camera's frame.
    pub fn bearings(&self) -> Vec<Vector3<f64>> {
        self.observations
            .iter()
            .map(|o| calibrate(&o.pixel, &self.cameras[o.camera].0))
            .collect()
    }

    /// Ray of each observation in the camera-set frame.
    pub fn rays(&self) -> Result<Vec<Ray>, LocalModelError> {
        self.observations
            .iter()
            .zip(self.bearings())
            .map(|(o, b)| {
                let pose = &self.cameras[o.camera].1;
                Ok(Ray::new(pose.bearing_to_frame(&b), pose.center())?)
            })
            .collect()
    }

    /// Re-estimates every point from its observation rays.
    pub fn retriangulate(&mut self, min_angle: f64) -> Result<(), LocalModelError> {
        let rays = self.rays()?;
        let mut per_point = vec![Vec::new(); self.points.len()];
        for (o, r) in self.observations.iter().zip(rays) {
            per_point[o.point].push(r);
        }
        for (p, rays) in self.points.iter_mut().zip(&per_point) {
            *p = triangulate(rays, min_angle)?.point;
        }
        Ok(())
    }

    /// Points with the descriptors of all their observations, for matching.
    pub fn local_points(&self) -> Vec<LocalPoint> {
        let mut out: Vec<LocalPoint> = self
            .points
            .iter()
            .map(|p| LocalPoint {
                position: *p,
                descriptors: Vec::new(),
            })
            .collect();
        for o in &self.observations {
            if let Some(d) = &o.descriptor {
                out[o.point].descriptors.push(d.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleAdjustment {
    pub model: CameraSetModel,
    pub cost: f64,
    pub sum_of_norms: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub cost_history: Vec<f64>,
}

#[derive(Debug, Clone)]
struct BaState {
    cameras: Vec<CameraPose>,
    points: Vec<Vector3<f64>>,
}

/// Layout: `[cameras 1.. | points]`; camera 1 keeps its distance to camera 0.
struct BaProblem<'a> {
    model: &'a CameraSetModel,
    bearings: Vec<Vector3<f64>>,
    cameras: CameraBlocks,
}

impl<'a> BaProblem<'a> {
    fn new(model: &'a CameraSetModel) -> Result<Self, LocalModelError> {
        model.validate()?;
        if model.cameras.len() < 2 {
            return Err(RefineError::GaugeUnderconstrained(
                "bundle adjustment needs 2 cameras".into(),
            )
            .into());
        }
        let c0 = model.cameras[0].1.center();
        if (model.cameras[1].1.center() - c0).norm() <= 1e-9 * (1.0 + c0.norm()) {
            return Err(RefineError::GaugeUnderconstrained(
                "cameras 0 and 1 share a center; the scale cannot be pinned".into(),
            )
            .into());
        }
        Ok(Self {
            model,
            bearings: model.bearings(),
            cameras: CameraBlocks::new(model.cameras.len(), 0, true, Some(1)),
        })
    }

    fn state(&self) -> BaState {
        BaState {
            cameras: self.model.poses(),
            points: self.model.points.clone(),
        }
    }
}

impl LmProblem for BaProblem<'_> {
    type State = BaState;

    fn dense_dim(&self) -> usize {
        self.cameras.dim()
    }

    fn num_point_blocks(&self) -> usize {
        self.model.points.len()
    }

    fn residuals(&self, s: &BaState) -> Result<Vec<Vector3<f64>>, RefineError> {
        self.model
            .observations
            .iter()
            .zip(&self.bearings)
            .map(|(o, b)| {
                ray_residual(
                    b,
                    &s.cameras[o.camera],
                    &HomogeneousPoint::from_euclidean(&s.points[o.point]),
                )
                .map_err(|e| RefineError::NumericalFailure(e.to_string()))
            })
            .collect()
    }

    fn linearize(&self, s: &BaState) -> Result<Vec<ResidualBlock>, RefineError> {
        let residuals = self.residuals(s)?;
        let dim = self.dense_dim();
        Ok(self
            .model
            .observations
            .iter()
            .zip(residuals)
            .map(|(o, residual)| {
                let cam = &s.cameras[o.camera];
                let x = &s.points[o.point];
                let g = residual_wrt_projection(&cam.transform_point(x));
                let mut dense = Matrix3xX::zeros(dim);
                self.cameras
                    .jacobian(&mut dense, o.camera, &s.cameras, &g, x);
                ResidualBlock {
                    residual,
                    dense,
                    point: Some((o.point, g * cam.rotation().matrix())),
                }
            })
            .collect())
    }

    fn retract(&self, s: &BaState, delta: &DVector<f64>) -> BaState {
        let mut out = s.clone();
        self.cameras.retract(&mut out.cameras, delta);
        let base = self.dense_dim();
        for (k, p) in out.points.iter_mut().enumerate() {
            *p += delta.fixed_rows::<3>(base + 3 * k);
        }
        out
    }
}

/// Refines camera poses 1.. and all points with intrinsics held fixed.
/// Camera 0 and the distance between cameras 0 and 1 fix the gauge.
pub fn bundle_adjust(
    model: &CameraSetModel,
    config: &LmConfig,
) -> Result<BundleAdjustment, LocalModelError> {
    let problem = BaProblem::new(model)?;
    let initial = problem.state();
    let initial_cost = crate::refine::cost_pair(&problem.residuals(&initial)?).0;
    let LmOutcome {
        state,
        iterations,
        termination,
        cost_history,
        ..
    } = minimize(&problem, initial, config)?;
    let (cost, sum_of_norms) = crate::refine::cost_pair(&problem.residuals(&state)?);
    let mut refined = model.clone();
    for ((_, pose), new) in refined.cameras.iter_mut().zip(state.cameras) {
        *pose = new;
    }
    refined.points = state.points;
    Ok(BundleAdjustment {
        model: refined,
        cost,
        sum_of_norms,
        initial_cost,
        iterations,
        termination,
        cost_history,
    })
}

/// Analytic vs central-difference Jacobian of the bundle adjustment problem.
pub fn bundle_jacobians(
    model: &CameraSetModel,
    h: f64,
) -> Result<JacobianComparison, LocalModelError> {
    let problem = BaProblem::new(model)?;
    Ok(compare_jacobians(&problem, &problem.state(), h)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_rays_meet_at_point() {
        let x = Vector3::new(1.0, 2.0, 10.0);
        let rays = [
            Ray::through(Vector3::zeros(), &x).unwrap(),
            Ray::through(Vector3::new(3.0, 0.0, 0.0), &x).unwrap(),
        ];
        let t = triangulate(&rays, DEFAULT_MIN_TRIANGULATION_ANGLE).unwrap();
        assert!((t.point - x).norm() < 1e-10);
        assert!(!t.behind);
    }

    #[test]
    fn skew_rays_give_common_perpendicular_midpoint() {
        // Lines along x at z = 0 and along y at z = 2.
        let rays = [
            Ray::new(Vector3::x(), Vector3::new(-5.0, 0.0, 0.0)).unwrap(),
            Ray::new(Vector3::y(), Vector3::new(0.0, -5.0, 2.0)).unwrap(),
        ];
        let t = triangulate(&rays, 1e-3).unwrap();
        assert!((t.point - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn parallel_and_too_few_rays() {
        let d = Vector3::new(0.0, 0.0, 1.0);
        let rays = [
            Ray::new(d, Vector3::zeros()).unwrap(),
            Ray::new(d, Vector3::new(1.0, 0.0, 0.0)).unwrap(),
        ];
        assert!(matches!(
            triangulate(&rays, 1e-3),
            Err(LocalModelError::DegenerateRays { .. })
        ));
        assert!(matches!(
            triangulate(&rays[..1], 1e-3),
            Err(LocalModelError::TooFewRays(1))
        ));
    }

    #[test]
    fn behind_flag() {
        let x = Vector3::new(0.0, 0.0, -10.0);
        let rays = [
            Ray::new(Vector3::new(0.0, 0.0, 1.0), Vector3::zeros()).unwrap(),
            Ray::through(Vector3::new(1.0, 0.0, 0.0), &x).unwrap(),
        ];
        assert!(triangulate(&rays, 1e-3).unwrap().behind);
    }
}
