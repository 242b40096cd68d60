//! 3D-to-3D matching between a local reconstruction and the scene point
//! cloud through feature descriptors attached to points.
//!
//! Both ratio tests work at point granularity: the second neighbor is the
//! closest descriptor of a *different* point. A match survives only if the
//! forward test (local -> scene) and the reverse test (scene -> local) pass
//! and the reverse nearest point is the one that issued the query.

mod index;

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{build_index, DescriptorIndex, Neighbor};

pub const DEFAULT_RATIO_THRESHOLD: f64 = 0.6;
pub const DEFAULT_DESCRIPTOR_DIM: usize = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("scene has no descriptors")]
    EmptyScene,
    #[error("descriptor dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("ratio threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
}

/// A finite feature vector. Serialized as a plain array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Descriptor(Vec<f32>);

impl Descriptor {
    pub fn new(values: Vec<f32>) -> Result<Self, MatchError> {
        if values.is_empty() {
            return Err(MatchError::InvalidDescriptor("empty".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(MatchError::InvalidDescriptor("non-finite entry".into()));
        }
        Ok(Self(values))
    }

    /// Scales `values` to unit L2 norm.
    pub fn normalized(values: Vec<f32>) -> Result<Self, MatchError> {
        let norm = values
            .iter()
            .map(|v| f64::from(*v).powi(2))
            .sum::<f64>()
            .sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(MatchError::InvalidDescriptor(
                "cannot normalize a zero vector".into(),
            ));
        }
        Self::new(
            values
                .into_iter()
                .map(|v| (f64::from(v) / norm) as f32)
                .collect(),
        )
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        index::squared_distance(&self.0, &other.0).sqrt()
    }
}

impl TryFrom<Vec<f32>> for Descriptor {
    type Error = MatchError;

    fn try_from(values: Vec<f32>) -> Result<Self, MatchError> {
        Self::new(values)
    }
}

impl From<Descriptor> for Vec<f32> {
    fn from(d: Descriptor) -> Self {
        d.0
    }
}

/// Scene points in the global frame with their descriptors. A point may own
/// several descriptors (one per observing image).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenePointCloud {
    pub points: Vec<Vector3<f64>>,
    pub descriptors: Vec<(usize, Descriptor)>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl ScenePointCloud {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.points.is_empty() || self.descriptors.is_empty() {
            return Err(MatchError::EmptyScene);
        }
        if let Some(i) = self
            .points
            .iter()
            .position(|p| !p.iter().all(|c| c.is_finite()))
        {
            return Err(MatchError::InvalidScene(format!("point {i} is not finite")));
        }
        let dim = self.descriptors[0].1.len();
        let mut covered = vec![false; self.points.len()];
        for (k, (p, d)) in self.descriptors.iter().enumerate() {
            if d.len() != dim {
                return Err(MatchError::DimensionMismatch {
                    expected: dim,
                    got: d.len(),
                });
            }
            match covered.get_mut(*p) {
                Some(c) => *c = true,
                None => {
                    return Err(MatchError::InvalidScene(format!(
                        "descriptor {k} references point {p} of {}",
                        self.points.len()
                    )))
                }
            }
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return Err(MatchError::InvalidScene(format!(
                "point {i} has no descriptor"
            )));
        }
        Ok(())
    }
}

/// A point of the local (camera-set) reconstruction with its descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalPoint {
    pub position: Vector3<f64>,
    pub descriptors: Vec<Descriptor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMatch {
    pub local_index: usize,
    pub scene_index: usize,
    pub descriptor_distance: f64,
    /// Forward ratio `d1 / d2` of the winning descriptor match.
    pub ratio: f64,
}

/// `d1 / d2` over the two nearest distinct points, or `None` when there is no
/// second point. Two zero distances count as full ambiguity.
fn ratio(neighbors: &[Neighbor]) -> Option<(f64, Neighbor)> {
    match neighbors {
        [first, second, ..] => {
            let r = if second.distance > 0.0 {
                first.distance / second.distance
            } else {
                1.0
            };
            Some((r, *first))
        }
        _ => None,
    }
}

struct Vote {
    scene: usize,
    distance: f64,
    ratio: f64,
}

/// Bidirectional ratio-test matching of local points against the scene.
///
/// Every local descriptor is tested on its own; the surviving descriptor
/// matches of a point then vote for a scene point. The winner has the most
/// votes, ties going to the smaller descriptor distance and then the smaller
/// scene index.
pub fn match_bidirectional(
    local: &[LocalPoint],
    scene: &DescriptorIndex,
    ratio_threshold: f64,
) -> Result<Vec<PointMatch>, MatchError> {
    if !(ratio_threshold > 0.0 && ratio_threshold < 1.0) {
        return Err(MatchError::InvalidThreshold(ratio_threshold));
    }
    if local.iter().all(|p| p.descriptors.is_empty()) {
        return Ok(Vec::new());
    }
    let reverse = DescriptorIndex::from_entries(
        local
            .iter()
            .enumerate()
            .flat_map(|(i, p)| p.descriptors.iter().map(move |d| (i, d))),
    )?;
    if reverse.dim() != scene.dim() {
        return Err(MatchError::DimensionMismatch {
            expected: scene.dim(),
            got: reverse.dim(),
        });
    }

    let mut matches = Vec::new();
    for (i, point) in local.iter().enumerate() {
        let mut votes = Vec::new();
        for d in &point.descriptors {
            let Some((forward, hit)) = ratio(&scene.nearest_points(d.values(), 2)?) else {
                continue;
            };
            if !(forward < ratio_threshold) {
                continue;
            }
            let back = reverse.nearest_points(scene.descriptor(hit.descriptor), 2)?;
            let Some((backward, back_hit)) = ratio(&back) else {
                continue;
            };
            if backward < ratio_threshold && back_hit.point == i {
                votes.push(Vote {
                    scene: hit.point,
                    distance: hit.distance,
                    ratio: forward,
                });
            }
        }
        if let Some(m) = majority(i, &votes) {
            matches.push(m);
        }
    }
    Ok(matches)
}

fn majority(local_index: usize, votes: &[Vote]) -> Option<PointMatch> {
    // scene point -> (count, best vote)
    let mut tally: BTreeMap<usize, (usize, &Vote)> = BTreeMap::new();
    for v in votes {
        tally
            .entry(v.scene)
            .and_modify(|(count, best)| {
                *count += 1;
                if v.distance < best.distance {
                    *best = v;
                }
            })
            .or_insert((1, v));
    }
    tally
        .into_values()
        .min_by(|(ca, a), (cb, b)| {
            cb.cmp(ca)
                .then(a.distance.total_cmp(&b.distance))
                .then(a.scene.cmp(&b.scene))
        })
        .map(|(_, v)| PointMatch {
            local_index,
            scene_index: v.scene,
            descriptor_distance: v.distance,
            ratio: v.ratio,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f32]) -> Descriptor {
        Descriptor::new(v.to_vec()).unwrap()
    }

    fn local(descs: &[&[f32]]) -> LocalPoint {
        LocalPoint {
            position: Vector3::zeros(),
            descriptors: descs.iter().map(|v| d(v)).collect(),
        }
    }

    fn scene(descs: &[(usize, &[f32])]) -> ScenePointCloud {
        let n = descs.iter().map(|(p, _)| p + 1).max().unwrap_or(0);
        ScenePointCloud {
            points: vec![Vector3::zeros(); n],
            descriptors: descs.iter().map(|(p, v)| (*p, d(v))).collect(),
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn identical_scene_descriptors_are_ambiguous() {
        let s = scene(&[(0, &[1.0, 0.0]), (1, &[1.0, 0.0]), (2, &[-1.0, 0.0])]);
        let index = build_index(&s).unwrap();
        let l = [local(&[&[1.0, 0.0]]), local(&[&[0.0, 1.0]])];
        assert!(match_bidirectional(&l, &index, 0.99).unwrap().is_empty());
    }

    #[test]
    fn clean_pair_matches_both_ways() {
        let s = scene(&[(0, &[1.0, 0.0]), (1, &[0.0, 1.0])]);
        let index = build_index(&s).unwrap();
        let l = [local(&[&[0.98, 0.05]]), local(&[&[0.02, 1.0]])];
        let m = match_bidirectional(&l, &index, 0.6).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].local_index, m[0].scene_index), (0, 0));
        assert_eq!((m[1].local_index, m[1].scene_index), (1, 1));
        assert!(m.iter().all(|x| x.ratio < 0.6));
    }

    #[test]
    fn reverse_test_rejects_non_mutual_match() {
        // Local point 1 is closer to scene point 0 than local point 0 is.
        let s = scene(&[(0, &[1.0, 0.0]), (1, &[0.0, 1.0])]);
        let index = build_index(&s).unwrap();
        let l = [
            local(&[&[0.9, 0.25]]),
            local(&[&[1.0, 0.0]]),
            local(&[&[-1.0, -1.0]]),
        ];
        let m = match_bidirectional(&l, &index, 0.6).unwrap();
        assert!(m.iter().all(|x| x.local_index != 0));
        assert!(m.iter().any(|x| x.local_index == 1 && x.scene_index == 0));
    }

    #[test]
    fn majority_vote_and_tie_break() {
        let votes = [
            Vote {
                scene: 3,
                distance: 0.2,
                ratio: 0.1,
            },
            Vote {
                scene: 5,
                distance: 0.1,
                ratio: 0.1,
            },
            Vote {
                scene: 3,
                distance: 0.3,
                ratio: 0.2,
            },
        ];
        let m = majority(7, &votes).unwrap();
        assert_eq!((m.scene_index, m.descriptor_distance), (3, 0.2));
        let tie = [
            Vote {
                scene: 3,
                distance: 0.2,
                ratio: 0.1,
            },
            Vote {
                scene: 5,
                distance: 0.1,
                ratio: 0.1,
            },
        ];
        assert_eq!(majority(0, &tie).unwrap().scene_index, 5);
        assert!(majority(0, &[]).is_none());
    }

    #[test]
    fn validation() {
        assert!(Descriptor::new(vec![f32::NAN]).is_err());
        assert!(Descriptor::normalized(vec![0.0, 0.0]).is_err());
        let n = Descriptor::normalized(vec![3.0, 4.0]).unwrap();
        assert!((n.values()[0] - 0.6).abs() < 1e-7);
        assert!(matches!(
            build_index(&ScenePointCloud::default()),
            Err(MatchError::EmptyScene)
        ));
        let mut s = scene(&[(0, &[1.0]), (1, &[0.0])]);
        s.points.push(Vector3::zeros());
        assert!(matches!(s.validate(), Err(MatchError::InvalidScene(_))));
        let index = build_index(&scene(&[(0, &[1.0]), (1, &[0.0])])).unwrap();
        assert!(matches!(
            match_bidirectional(&[], &index, 1.0),
            Err(MatchError::InvalidThreshold(_))
        ));
        assert!(match_bidirectional(&[], &index, 0.6).unwrap().is_empty());
    }

    #[test]
    fn descriptor_serializes_as_array() {
        let json = serde_json::to_string(&d(&[0.5, -1.0])).unwrap();
        assert_eq!(json, "[0.5,-1.0]");
        assert!(serde_json::from_str::<Descriptor>("[]").is_err());
    }
}
