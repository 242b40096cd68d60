//! Line-delimited JSON record files.
//!
//! Every file starts with a header line `{"format": <name>, "version": 1}`
//! followed by one record per line. Records are externally tagged
//! (`{"point": {...}}`) where a file mixes record kinds. Floats are written in
//! shortest round-trip form, so write-then-read reproduces every value
//! bit-exactly. Rotations are stored as row-major 3x3 matrices.

use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{GroundTruth, LocalizationResult, LocalizationStatus, PipelineError, QuerySet};
use crate::geometry::{CameraIntrinsics, CameraModel, CameraPose, Sim3Transform};
use crate::local_model::{CameraSetModel, PixelObservation};
use crate::matcher::{Descriptor, PointMatch, ScenePointCloud};

pub const FORMAT_VERSION: u32 = 1;
pub const SCENE_FORMAT: &str = "camset-scene";
pub const QUERY_FORMAT: &str = "camset-query";
pub const TRUTH_FORMAT: &str = "camset-truth";
pub const MATCHES_FORMAT: &str = "camset-matches";
pub const TRANSFORM_FORMAT: &str = "camset-transform";
pub const RESULTS_FORMAT: &str = "camset-results";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseDto {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
}

fn rotation_from_rows(r: &[[f64; 3]; 3]) -> Result<Rotation3<f64>, PipelineError> {
    let m = Matrix3::from_fn(|i, j| r[i][j]);
    let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
    if !(ortho <= 1e-9) || !((m.determinant() - 1.0).abs() <= 1e-9) {
        return Err(PipelineError::Format(format!(
            "rotation is not orthonormal (err {ortho:e})"
        )));
    }
    Ok(Rotation3::from_matrix_unchecked(m))
}

impl From<&CameraPose> for PoseDto {
    fn from(p: &CameraPose) -> Self {
        Self {
            rotation: rows(p.rotation().matrix()),
            translation: (*p.translation()).into(),
        }
    }
}

impl TryFrom<&PoseDto> for CameraPose {
    type Error = PipelineError;

    fn try_from(d: &PoseDto) -> Result<Self, PipelineError> {
        if !d.translation.iter().all(|t| t.is_finite()) {
            return Err(PipelineError::Format("non-finite translation".into()));
        }
        Ok(CameraPose::new(
            rotation_from_rows(&d.rotation)?,
            d.translation.into(),
        ))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TransformDto {
    pub scale: f64,
    pub rotation: [[f64; 3]; 3],
    pub center: [f64; 3],
}

impl From<&Sim3Transform> for TransformDto {
    fn from(t: &Sim3Transform) -> Self {
        Self {
            scale: t.scale(),
            rotation: rows(t.rotation().matrix()),
            center: (*t.center()).into(),
        }
    }
}

impl TryFrom<&TransformDto> for Sim3Transform {
    type Error = PipelineError;

    fn try_from(d: &TransformDto) -> Result<Self, PipelineError> {
        Ok(Sim3Transform::new(
            d.scale,
            rotation_from_rows(&d.rotation)?,
            d.center.into(),
        )?)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelDto {
    Panoramic,
    Rectilinear,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IntrinsicsDto {
    pub model: ModelDto,
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub image_size: [u32; 2],
}

impl From<&CameraIntrinsics> for IntrinsicsDto {
    fn from(k: &CameraIntrinsics) -> Self {
        Self {
            model: match k.model() {
                CameraModel::Panoramic => ModelDto::Panoramic,
                CameraModel::Rectilinear => ModelDto::Rectilinear,
            },
            focal: k.focal(),
            principal_point: (*k.principal_point()).into(),
            image_size: k.image_size(),
        }
    }
}

impl TryFrom<&IntrinsicsDto> for CameraIntrinsics {
    type Error = PipelineError;

    fn try_from(d: &IntrinsicsDto) -> Result<Self, PipelineError> {
        let model = match d.model {
            ModelDto::Panoramic => CameraModel::Panoramic,
            ModelDto::Rectilinear => CameraModel::Rectilinear,
        };
        Ok(CameraIntrinsics::new(
            model,
            d.focal,
            Vector2::from(d.principal_point),
            d.image_size,
        )?)
    }
}

fn write_header<W: Write>(w: &mut W, format: &str) -> Result<(), PipelineError> {
    write_line(
        w,
        &Header {
            format: format.to_string(),
            version: FORMAT_VERSION,
        },
    )
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<(), PipelineError> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Checks the header and returns the parsed records; blank lines are skipped.
fn read_records<R: BufRead, T: DeserializeOwned>(
    r: R,
    format: &str,
) -> Result<Vec<T>, PipelineError> {
    let mut lines = r
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
    let Some((_, first)) = lines.next() else {
        return Err(PipelineError::Format(format!("empty {format} file")));
    };
    let header: Header = serde_json::from_str(&first?)
        .map_err(|e| PipelineError::Format(format!("bad header: {e}")))?;
    if header.format != format {
        return Err(PipelineError::Format(format!(
            "expected a {format} file, got {}",
            header.format
        )));
    }
    if header.version != FORMAT_VERSION {
        return Err(PipelineError::Format(format!(
            "unsupported {format} version {} (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    lines
        .map(|(n, line)| {
            serde_json::from_str(&line?)
                .map_err(|e| PipelineError::Format(format!("line {}: {e}", n + 1)))
        })
        .collect()
}

fn finite3(v: [f64; 3], what: &str) -> Result<Vector3<f64>, PipelineError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v.into())
    } else {
        Err(PipelineError::Format(format!("non-finite {what}")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SceneRecord {
    Metadata { key: String, value: String },
    Point { id: usize, position: [f64; 3] },
    Descriptor { point: usize, values: Descriptor },
}

pub fn write_scene<W: Write>(w: &mut W, scene: &ScenePointCloud) -> Result<(), PipelineError> {
    write_header(w, SCENE_FORMAT)?;
    for (key, value) in &scene.metadata {
        write_line(
            w,
            &SceneRecord::Metadata {
                key: key.clone(),
                value: value.clone(),
            },
        )?;
    }
    for (id, p) in scene.points.iter().enumerate() {
        write_line(
            w,
            &SceneRecord::Point {
                id,
                position: (*p).into(),
            },
        )?;
    }
    for (point, d) in &scene.descriptors {
        write_line(
            w,
            &SceneRecord::Descriptor {
                point: *point,
                values: d.clone(),
            },
        )?;
    }
    Ok(())
}

pub fn read_scene<R: BufRead>(r: R) -> Result<ScenePointCloud, PipelineError> {
    let mut scene = ScenePointCloud::default();
    for record in read_records::<_, SceneRecord>(r, SCENE_FORMAT)? {
        match record {
            SceneRecord::Metadata { key, value } => {
                scene.metadata.insert(key, value);
            }
            SceneRecord::Point { id, position } => {
                if id != scene.points.len() {
                    return Err(PipelineError::Format(format!(
                        "point id {id} out of sequence"
                    )));
                }
                scene.points.push(finite3(position, "point")?);
            }
            SceneRecord::Descriptor { point, values } => scene.descriptors.push((point, values)),
        }
    }
    scene.validate()?;
    Ok(scene)
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum QueryRecord {
    /// Starts a new set; the records that follow belong to it.
    Set {
        id: String,
        target_camera: usize,
    },
    Camera {
        id: usize,
        intrinsics: IntrinsicsDto,
        pose: PoseDto,
    },
    Point {
        id: usize,
        position: [f64; 3],
    },
    Observation {
        camera: usize,
        point: usize,
        pixel: [f64; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        descriptor: Option<Descriptor>,
    },
}

pub fn write_queries<W: Write>(w: &mut W, queries: &[QuerySet]) -> Result<(), PipelineError> {
    write_header(w, QUERY_FORMAT)?;
    for q in queries {
        let m = &q.model;
        write_line(
            w,
            &QueryRecord::Set {
                id: q.id.clone(),
                target_camera: m.target_camera,
            },
        )?;
        for (id, (k, pose)) in m.cameras.iter().enumerate() {
            write_line(
                w,
                &QueryRecord::Camera {
                    id,
                    intrinsics: k.into(),
                    pose: pose.into(),
                },
            )?;
        }
        for (id, p) in m.points.iter().enumerate() {
            write_line(
                w,
                &QueryRecord::Point {
                    id,
                    position: (*p).into(),
                },
            )?;
        }
        for o in &m.observations {
            write_line(
                w,
                &QueryRecord::Observation {
                    camera: o.camera,
                    point: o.point,
                    pixel: o.pixel.into(),
                    descriptor: o.descriptor.clone(),
                },
            )?;
        }
    }
    Ok(())
}

pub fn read_queries<R: BufRead>(r: R) -> Result<Vec<QuerySet>, PipelineError> {
    let mut sets: Vec<QuerySet> = Vec::new();
    for record in read_records::<_, QueryRecord>(r, QUERY_FORMAT)? {
        if let QueryRecord::Set { id, target_camera } = record {
            sets.push(QuerySet {
                id,
                model: CameraSetModel {
                    cameras: Vec::new(),
                    points: Vec::new(),
                    observations: Vec::new(),
                    target_camera,
                },
            });
            continue;
        }
        let Some(set) = sets.last_mut() else {
            return Err(PipelineError::Format("record before the first set".into()));
        };
        let m = &mut set.model;
        match record {
            QueryRecord::Set { .. } => unreachable!(),
            QueryRecord::Camera {
                id,
                intrinsics,
                pose,
            } => {
                if id != m.cameras.len() {
                    return Err(PipelineError::Format(format!(
                        "camera id {id} out of sequence"
                    )));
                }
                m.cameras
                    .push(((&intrinsics).try_into()?, (&pose).try_into()?));
            }
            QueryRecord::Point { id, position } => {
                if id != m.points.len() {
                    return Err(PipelineError::Format(format!(
                        "point id {id} out of sequence"
                    )));
                }
                m.points.push(finite3(position, "point")?);
            }
            QueryRecord::Observation {
                camera,
                point,
                pixel,
                descriptor,
            } => m.observations.push(PixelObservation {
                camera,
                point,
                pixel: pixel.into(),
                descriptor,
            }),
        }
    }
    for s in &sets {
        s.model.validate()?;
    }
    Ok(sets)
}

#[derive(Serialize, Deserialize)]
struct TruthRecord {
    query_id: String,
    transform: TransformDto,
    target_camera: usize,
    target_pose: PoseDto,
    camera_poses: Vec<PoseDto>,
    local_poses: Vec<PoseDto>,
    local_to_scene: Vec<usize>,
    outlier: Vec<bool>,
}

fn poses(d: &[PoseDto]) -> Result<Vec<CameraPose>, PipelineError> {
    d.iter().map(CameraPose::try_from).collect()
}

pub fn write_truths<W: Write>(w: &mut W, truths: &[GroundTruth]) -> Result<(), PipelineError> {
    write_header(w, TRUTH_FORMAT)?;
    for t in truths {
        write_line(
            w,
            &TruthRecord {
                query_id: t.query_id.clone(),
                transform: (&t.transform).into(),
                target_camera: t.target_camera,
                target_pose: (&t.target_pose_global).into(),
                camera_poses: t.camera_poses_global.iter().map(Into::into).collect(),
                local_poses: t.local_poses.iter().map(Into::into).collect(),
                local_to_scene: t.local_to_scene.clone(),
                outlier: t.outlier.clone(),
            },
        )?;
    }
    Ok(())
}

pub fn read_truths<R: BufRead>(r: R) -> Result<Vec<GroundTruth>, PipelineError> {
    read_records::<_, TruthRecord>(r, TRUTH_FORMAT)?
        .into_iter()
        .map(|t| {
            Ok(GroundTruth {
                query_id: t.query_id,
                transform: (&t.transform).try_into()?,
                target_camera: t.target_camera,
                target_pose_global: (&t.target_pose).try_into()?,
                camera_poses_global: poses(&t.camera_poses)?,
                local_poses: poses(&t.local_poses)?,
                local_to_scene: t.local_to_scene,
                outlier: t.outlier,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct MatchRecord {
    query_id: String,
    local_index: usize,
    scene_index: usize,
    descriptor_distance: f64,
    ratio: f64,
}

/// Matches grouped by query id, in file order.
pub type QueryMatches = Vec<(String, Vec<PointMatch>)>;

pub fn write_matches<W: Write>(
    w: &mut W,
    matches: &[(String, Vec<PointMatch>)],
) -> Result<(), PipelineError> {
    write_header(w, MATCHES_FORMAT)?;
    for (query_id, list) in matches {
        for m in list {
            write_line(
                w,
                &MatchRecord {
                    query_id: query_id.clone(),
                    local_index: m.local_index,
                    scene_index: m.scene_index,
                    descriptor_distance: m.descriptor_distance,
                    ratio: m.ratio,
                },
            )?;
        }
    }
    Ok(())
}

/// Queries without matches do not appear in the file and so are absent here.
pub fn read_matches<R: BufRead>(r: R) -> Result<QueryMatches, PipelineError> {
    let mut out: QueryMatches = Vec::new();
    for m in read_records::<_, MatchRecord>(r, MATCHES_FORMAT)? {
        let pm = PointMatch {
            local_index: m.local_index,
            scene_index: m.scene_index,
            descriptor_distance: m.descriptor_distance,
            ratio: m.ratio,
        };
        match out.iter_mut().find(|(id, _)| *id == m.query_id) {
            Some((_, list)) => list.push(pm),
            None => out.push((m.query_id, vec![pm])),
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct TransformRecord {
    query_id: String,
    transform: TransformDto,
}

pub fn write_transforms<W: Write>(
    w: &mut W,
    transforms: &[(String, Sim3Transform)],
) -> Result<(), PipelineError> {
    write_header(w, TRANSFORM_FORMAT)?;
    for (query_id, t) in transforms {
        write_line(
            w,
            &TransformRecord {
                query_id: query_id.clone(),
                transform: t.into(),
            },
        )?;
    }
    Ok(())
}

pub fn read_transforms<R: BufRead>(r: R) -> Result<Vec<(String, Sim3Transform)>, PipelineError> {
    read_records::<_, TransformRecord>(r, TRANSFORM_FORMAT)?
        .into_iter()
        .map(|t| Ok((t.query_id, (&t.transform).try_into()?)))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ResultRecord {
    query_id: String,
    status: LocalizationStatus,
    #[serde(default)]
    target_pose: Option<PoseDto>,
    #[serde(default)]
    transform: Option<TransformDto>,
    inlier_count: usize,
    match_count: usize,
    per_camera_poses: Vec<PoseDto>,
    #[serde(default)]
    failure: Option<String>,
}

pub fn write_results<W: Write>(
    w: &mut W,
    results: &[LocalizationResult],
) -> Result<(), PipelineError> {
    write_header(w, RESULTS_FORMAT)?;
    for r in results {
        write_line(
            w,
            &ResultRecord {
                query_id: r.query_id.clone(),
                status: r.status,
                target_pose: r.target_pose_global.as_ref().map(Into::into),
                transform: r.transform.as_ref().map(Into::into),
                inlier_count: r.inlier_count,
                match_count: r.match_count,
                per_camera_poses: r.per_camera_poses_global.iter().map(Into::into).collect(),
                failure: r.failure.clone(),
            },
        )?;
    }
    Ok(())
}

pub fn read_results<R: BufRead>(r: R) -> Result<Vec<LocalizationResult>, PipelineError> {
    read_records::<_, ResultRecord>(r, RESULTS_FORMAT)?
        .into_iter()
        .map(|r| {
            let target_pose_global = r
                .target_pose
                .as_ref()
                .map(CameraPose::try_from)
                .transpose()?;
            if target_pose_global.is_some() == (r.status == LocalizationStatus::Failed) {
                return Err(PipelineError::Format(format!(
                    "{}: status {:?} inconsistent with the presence of a pose",
                    r.query_id, r.status
                )));
            }
            Ok(LocalizationResult {
                query_id: r.query_id,
                status: r.status,
                target_pose_global,
                transform: r
                    .transform
                    .as_ref()
                    .map(Sim3Transform::try_from)
                    .transpose()?,
                inlier_count: r.inlier_count,
                match_count: r.match_count,
                per_camera_poses_global: poses(&r.per_camera_poses)?,
                failure: r.failure,
            })
        })
        .collect()
}
