//! Camera-set pose estimation for image-set localization.
//!
//! A set of calibrated cameras reconstructed in a local frame is treated as a
//! single generalized camera: a bag of rays with distinct projection centers.
//! Given rays matched to points of a pre-built scene point cloud, the crate
//! estimates the 7-DOF similarity transform registering the scene into the
//! camera-set frame, refines it by minimizing ray reprojection error, and
//! extracts the pose of a designated target camera.
//!
//! Modules, bottom-up:
//!
//! - [`geometry`]: rays, similarity transforms, camera models and the ray residual.
//! - [`solver`]: the linear (DLT) camera-set solver, its single-camera case, RANSAC.
//! - [`refine`]: Levenberg-Marquardt refinement of the transform alone and jointly
//!   with intra-set camera poses and local points.
//! - [`matcher`]: descriptor index and bidirectional ratio-test matching.
//! - [`local_model`]: ray triangulation and ray-error bundle adjustment.
//! - [`pipeline`]: localization flow, synthetic scenes, evaluation, file formats.

pub mod geometry;
pub mod local_model;
pub mod matcher;
pub mod pipeline;
pub mod refine;
pub mod solver;

pub use geometry::{
    CameraIntrinsics, CameraModel, CameraPose, GeometryError, HomogeneousPoint, Ray, Sim3Transform,
};
