use std::cmp::Ordering;

use super::{Descriptor, MatchError, ScenePointCloud};

/// One index hit: the stored descriptor, the point that owns it and the
/// Euclidean descriptor distance to the query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub descriptor: usize,
    pub point: usize,
    pub distance: f64,
}

/// Exact nearest-neighbor index over a flat descriptor table. Each stored
/// descriptor carries the index of the point it belongs to.
#[derive(Debug, Clone)]
pub struct DescriptorIndex {
    dim: usize,
    data: Vec<f32>,
    owners: Vec<usize>,
}

pub(super) fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

/// Total order on hits: distance, then owning point, then the descriptor
/// values themselves so that ties do not depend on insertion order.
fn hit_order(index: &DescriptorIndex, a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.point.cmp(&b.point))
        .then_with(|| {
            let (x, y) = (
                index.descriptor(a.descriptor),
                index.descriptor(b.descriptor),
            );
            x.iter()
                .zip(y)
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

impl DescriptorIndex {
    /// Builds an index from `(owner, descriptor)` pairs. All descriptors must
    /// share one dimension.
    pub fn from_entries<'a, I>(entries: I) -> Result<Self, MatchError>
    where
        I: IntoIterator<Item = (usize, &'a Descriptor)>,
    {
        let mut dim = None;
        let mut data = Vec::new();
        let mut owners = Vec::new();
        for (owner, d) in entries {
            let expected = *dim.get_or_insert(d.len());
            if d.len() != expected {
                return Err(MatchError::DimensionMismatch {
                    expected,
                    got: d.len(),
                });
            }
            data.extend_from_slice(d.values());
            owners.push(owner);
        }
        let dim = dim.ok_or(MatchError::EmptyScene)?;
        Ok(Self { dim, data, owners })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.owners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.owners.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn owner(&self, i: usize) -> usize {
        self.owners[i]
    }

    fn check_query(&self, query: &[f32]) -> Result<(), MatchError> {
        if query.len() != self.dim {
            return Err(MatchError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        Ok(())
    }

    fn hits<'s>(&'s self, query: &'s [f32]) -> impl Iterator<Item = Neighbor> + 's {
        (0..self.len()).map(move |i| Neighbor {
            descriptor: i,
            point: self.owners[i],
            distance: squared_distance(self.descriptor(i), query).sqrt(),
        })
    }

    /// The `k` nearest stored descriptors, nearest first.
    pub fn nearest(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>, MatchError> {
        self.check_query(query)?;
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        for hit in self.hits(query) {
            insert_bounded(self, &mut best, hit, k);
        }
        Ok(best)
    }

    /// The `k` nearest distinct points, each represented by its closest
    /// descriptor, nearest first.
    pub fn nearest_points(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>, MatchError> {
        self.check_query(query)?;
        let mut best: Vec<Neighbor> = Vec::with_capacity(k + 1);
        for hit in self.hits(query) {
            if let Some(pos) = best.iter().position(|n| n.point == hit.point) {
                if hit_order(self, &hit, &best[pos]).is_lt() {
                    best.remove(pos);
                    insert_bounded(self, &mut best, hit, k);
                }
            } else {
                insert_bounded(self, &mut best, hit, k);
            }
        }
        Ok(best)
    }
}

fn insert_bounded(index: &DescriptorIndex, best: &mut Vec<Neighbor>, hit: Neighbor, k: usize) {
    if k == 0 {
        return;
    }
    if best.len() == k && hit_order(index, &hit, &best[k - 1]).is_ge() {
        return;
    }
    let pos = best.partition_point(|n| hit_order(index, n, &hit).is_lt());
    best.insert(pos, hit);
    best.truncate(k);
}

/// Exact index over every descriptor of the scene.
pub fn build_index(scene: &ScenePointCloud) -> Result<DescriptorIndex, MatchError> {
    scene.validate()?;
    DescriptorIndex::from_entries(scene.descriptors.iter().map(|(p, d)| (*p, d)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: &[f32]) -> Descriptor {
        Descriptor::new(v.to_vec()).unwrap()
    }

    #[test]
    fn distinct_points_skip_duplicate_owners() {
        let entries = [
            (0, d(&[0.0, 0.0])),
            (0, d(&[0.1, 0.0])),
            (1, d(&[1.0, 0.0])),
        ];
        let index = DescriptorIndex::from_entries(entries.iter().map(|(p, d)| (*p, d))).unwrap();
        let q = d(&[0.0, 0.0]);
        let raw = index.nearest(q.values(), 2).unwrap();
        assert_eq!((raw[0].point, raw[1].point), (0, 0));
        let pts = index.nearest_points(q.values(), 2).unwrap();
        assert_eq!((pts[0].point, pts[1].point), (0, 1));
        assert_eq!(pts[0].distance, 0.0);
        assert!((pts[1].distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn later_better_descriptor_replaces_point_entry() {
        let entries = [
            (0, d(&[0.5])),
            (1, d(&[0.3])),
            (0, d(&[0.1])),
            (2, d(&[0.2])),
        ];
        let index = DescriptorIndex::from_entries(entries.iter().map(|(p, d)| (*p, d))).unwrap();
        let pts = index.nearest_points(&[0.0], 2).unwrap();
        assert_eq!((pts[0].point, pts[0].descriptor), (0, 2));
        assert_eq!(pts[1].point, 2);
    }

    #[test]
    fn rejects_mixed_dimensions_and_empty() {
        let entries = [(0, d(&[0.0, 1.0])), (1, d(&[1.0]))];
        assert!(matches!(
            DescriptorIndex::from_entries(entries.iter().map(|(p, d)| (*p, d))),
            Err(MatchError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
        assert!(matches!(
            DescriptorIndex::from_entries(std::iter::empty()),
            Err(MatchError::EmptyScene)
        ));
    }
}
