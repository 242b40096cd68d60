use std::collections::BTreeSet;

use nalgebra::{DVector, Matrix3xX, Vector3};

use super::cameras::{first_distinct_center, CameraBlocks};
use super::lm::{compare_jacobians, minimize, LmOutcome};
use super::transform::{retract_transform, transform_block};
use super::{
    check_observations, cost_pair, residual_wrt_projection, JacobianComparison, LmConfig,
    LmProblem, RayObservation, RefineError, ResidualBlock, Termination,
};
use crate::geometry::{ray_residual, CameraPose, HomogeneousPoint, Sim3Transform};

/// Everything the joint objective touches: the similarity, the intra-set
/// camera poses (camera 0 is the gauge anchor), the local reconstruction and
/// both kinds of observations.
///
/// `global_obs[*].point` indexes `global_points`; `local_obs[*].point`
/// indexes `local_points`. Bearings are unit vectors in the observing
/// camera's frame.
#[derive(Debug, Clone, PartialEq)]
pub struct JointProblem {
    pub transform: Sim3Transform,
    pub cameras: Vec<CameraPose>,
    pub local_points: Vec<Vector3<f64>>,
    pub global_points: Vec<Vector3<f64>>,
    pub global_obs: Vec<RayObservation>,
    pub local_obs: Vec<RayObservation>,
}

/// Which blocks besides the transform are optimized. Freezing both gives the
/// transform-only objective with the local term as a fixed addend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JointOptions {
    pub freeze_cameras: bool,
    pub freeze_points: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointRefinement {
    pub problem: JointProblem,
    /// Sum of squared residual norms over both terms.
    pub cost: f64,
    pub sum_of_norms: f64,
    pub initial_cost: f64,
    pub initial_sum_of_norms: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl JointProblem {
    /// Residuals of both terms, global observations first.
    pub fn residuals(&self) -> Result<Vec<Vector3<f64>>, RefineError> {
        let state = JointState {
            transform: self.transform,
            cameras: self.cameras.clone(),
            points: self.local_points.clone(),
        };
        let frozen = JointOptions {
            freeze_cameras: true,
            freeze_points: true,
        };
        JointLm::new(self, frozen)?.residuals(&state)
    }

    fn validate(&self) -> Result<(), RefineError> {
        if self.cameras.len() < 2 {
            return Err(RefineError::GaugeUnderconstrained(format!(
                "joint refinement needs at least 2 cameras, got {}",
                self.cameras.len()
            )));
        }
        if self.global_obs.is_empty() {
            return Err(RefineError::GaugeUnderconstrained(
                "no global observations; the transform is unidentifiable".into(),
            ));
        }
        check_observations(
            &self.global_obs,
            self.cameras.len(),
            self.global_points.len(),
            "global",
        )?;
        check_observations(
            &self.local_obs,
            self.cameras.len(),
            self.local_points.len(),
            "local",
        )?;

        let mut seen_by: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.local_points.len()];
        for o in &self.local_obs {
            seen_by[o.point].insert(o.camera);
        }
        if let Some(k) = seen_by.iter().position(|s| s.len() == 1) {
            return Err(RefineError::InvalidProblem(format!(
                "local point {k} is observed by a single camera"
            )));
        }
        let mut used = vec![false; self.cameras.len()];
        for o in self.global_obs.iter().chain(&self.local_obs) {
            used[o.camera] = true;
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(RefineError::InvalidProblem(format!(
                "camera {i} has no observations"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct JointState {
    transform: Sim3Transform,
    cameras: Vec<CameraPose>,
    points: Vec<Vector3<f64>>,
}

/// Parameter layout: `[transform (7) | cameras | points (3 each)]`.
struct JointLm<'a> {
    problem: &'a JointProblem,
    cameras: CameraBlocks,
    /// Local point -> point-block index, for observed, non-frozen points.
    point_block: Vec<Option<usize>>,
    free_points: Vec<usize>,
}

impl<'a> JointLm<'a> {
    fn new(problem: &'a JointProblem, options: JointOptions) -> Result<Self, RefineError> {
        let mut observed = vec![false; problem.local_points.len()];
        for o in &problem.local_obs {
            if let Some(flag) = observed.get_mut(o.point) {
                *flag = true;
            }
        }
        let mut point_block = vec![None; problem.local_points.len()];
        let mut free_points = Vec::new();
        if !options.freeze_points {
            for (k, &seen) in observed.iter().enumerate() {
                if seen {
                    point_block[k] = Some(free_points.len());
                    free_points.push(k);
                }
            }
        }

        // Scaling T, the camera centers and the local points about camera 0
        // leaves every bearing unchanged unless frozen points fix the scale.
        let scale_free =
            !options.freeze_cameras && (!free_points.is_empty() || problem.local_obs.is_empty());
        let anchor = if scale_free {
            Some(first_distinct_center(&problem.cameras).ok_or_else(|| {
                RefineError::GaugeUnderconstrained(
                    "all camera centers coincide; scale is unobservable".into(),
                )
            })?)
        } else {
            None
        };
        let cameras = CameraBlocks::new(problem.cameras.len(), 7, !options.freeze_cameras, anchor);
        Ok(Self {
            problem,
            cameras,
            point_block,
            free_points,
        })
    }
}

fn geometry_residual(
    bearing: &Vector3<f64>,
    camera: &CameraPose,
    point: &Vector3<f64>,
) -> Result<Vector3<f64>, RefineError> {
    ray_residual(bearing, camera, &HomogeneousPoint::from_euclidean(point))
        .map_err(|e| RefineError::NumericalFailure(e.to_string()))
}

impl LmProblem for JointLm<'_> {
    type State = JointState;

    fn dense_dim(&self) -> usize {
        7 + self.cameras.dim()
    }

    fn num_point_blocks(&self) -> usize {
        self.free_points.len()
    }

    fn residuals(&self, s: &JointState) -> Result<Vec<Vector3<f64>>, RefineError> {
        let p = self.problem;
        let global = p.global_obs.iter().map(|o| {
            let y = s.transform.apply(&p.global_points[o.point]);
            geometry_residual(&o.bearing, &s.cameras[o.camera], &y)
        });
        let local = p
            .local_obs
            .iter()
            .map(|o| geometry_residual(&o.bearing, &s.cameras[o.camera], &s.points[o.point]));
        global.chain(local).collect()
    }

    fn linearize(&self, s: &JointState) -> Result<Vec<ResidualBlock>, RefineError> {
        let p = self.problem;
        let residuals = self.residuals(s)?;
        let dim = self.dense_dim();
        let mut blocks = Vec::with_capacity(residuals.len());
        let mut residuals = residuals.into_iter();

        for o in &p.global_obs {
            let cam = &s.cameras[o.camera];
            let y = s.transform.apply(&p.global_points[o.point]);
            let z = cam.transform_point(&y);
            let g = residual_wrt_projection(&z);
            let mut dense = Matrix3xX::zeros(dim);
            let lhs = g * cam.rotation().matrix();
            dense
                .fixed_columns_mut::<7>(0)
                .copy_from(&transform_block(&lhs, &s.transform, &y));
            self.cameras
                .jacobian(&mut dense, o.camera, &s.cameras, &g, &y);
            blocks.push(ResidualBlock {
                residual: residuals.next().expect("residual per observation"),
                dense,
                point: None,
            });
        }

        for o in &p.local_obs {
            let cam = &s.cameras[o.camera];
            let x = &s.points[o.point];
            let z = cam.transform_point(x);
            let g = residual_wrt_projection(&z);
            let mut dense = Matrix3xX::zeros(dim);
            self.cameras
                .jacobian(&mut dense, o.camera, &s.cameras, &g, x);
            let point = self.point_block[o.point].map(|k| (k, g * cam.rotation().matrix()));
            blocks.push(ResidualBlock {
                residual: residuals.next().expect("residual per observation"),
                dense,
                point,
            });
        }
        Ok(blocks)
    }

    fn retract(&self, s: &JointState, delta: &DVector<f64>) -> JointState {
        let mut out = s.clone();
        out.transform = retract_transform(&s.transform, &delta.as_slice()[..7]);
        self.cameras.retract(&mut out.cameras, delta);
        let base = self.dense_dim();
        for (block, &k) in self.free_points.iter().enumerate() {
            out.points[k] += delta.fixed_rows::<3>(base + 3 * block);
        }
        out
    }
}

/// Minimizes both ray terms over the transform, cameras 1..m-1 and every
/// observed local point. Camera 0 is never modified, and the first camera
/// with a distinct center keeps its distance to camera 0 so that the overall
/// scale of the camera set is not a free direction.
pub fn refine_joint(
    problem: &JointProblem,
    config: &LmConfig,
) -> Result<JointRefinement, RefineError> {
    refine_joint_with(problem, config, JointOptions::default())
}

pub fn refine_joint_with(
    problem: &JointProblem,
    config: &LmConfig,
    options: JointOptions,
) -> Result<JointRefinement, RefineError> {
    problem.validate()?;
    let lm = JointLm::new(problem, options)?;
    let initial = JointState {
        transform: problem.transform,
        cameras: problem.cameras.clone(),
        points: problem.local_points.clone(),
    };
    let (initial_cost, initial_sum_of_norms) = cost_pair(&lm.residuals(&initial)?);
    let LmOutcome {
        state,
        iterations,
        termination,
        cost_history,
        ..
    } = minimize(&lm, initial, config)?;
    let (cost, sum_of_norms) = cost_pair(&lm.residuals(&state)?);
    let mut refined = problem.clone();
    refined.transform = state.transform;
    refined.cameras = state.cameras;
    refined.local_points = state.points;
    Ok(JointRefinement {
        problem: refined,
        cost,
        sum_of_norms,
        initial_cost,
        initial_sum_of_norms,
        iterations,
        termination,
        cost_history,
    })
}

/// Analytic vs central-difference Jacobian of the joint problem.
pub fn joint_jacobians(
    problem: &JointProblem,
    options: JointOptions,
    h: f64,
) -> Result<JacobianComparison, RefineError> {
    problem.validate()?;
    let lm = JointLm::new(problem, options)?;
    let state = JointState {
        transform: problem.transform,
        cameras: problem.cameras.clone(),
        points: problem.local_points.clone(),
    };
    compare_jacobians(&lm, &state, h)
}
