//! Incremental target segment map: incomplete-segment filtering, insertion,
//! duplicate removal, pose refresh and persistence.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::cloud::{horizontal_distance, Point3, Trajectory};
use crate::descriptors::FeatureVector;
use crate::error::{Error, Result};
use crate::matching::SegmentLookup;
use crate::segmentation::Segment;
use crate::spatial::KdTree;
use crate::wire;

const MAP_MAGIC: &[u8; 6] = b"SEGMAP";
const MAP_VERSION: u8 = b'1';

#[derive(Debug, Clone, PartialEq)]
pub struct TargetMap {
    segments: BTreeMap<u64, Segment>,
    duplicate_distance: f64,
    boundary_thickness: f64,
    next_id: u64,
}

/// Drops every segment with a point whose horizontal distance to `center`
/// lies in `(radius − b, radius]`.
pub fn filter_incomplete(
    segments: Vec<Segment>,
    center: &Point3,
    radius: f64,
    b: f64,
) -> Result<Vec<Segment>> {
    if !(b > 0.0 && b < radius) {
        return Err(Error::param(format!(
            "boundary thickness must satisfy 0 < b < R, got b={b}, R={radius}"
        )));
    }
    let inner = radius - b;
    Ok(segments
        .into_iter()
        .filter(|s| {
            !s.points.iter().any(|p| {
                let d = horizontal_distance(p, center);
                d > inner && d <= radius
            })
        })
        .collect())
}

impl TargetMap {
    pub fn new(duplicate_distance: f64, boundary_thickness: f64) -> Result<Self> {
        if !(duplicate_distance >= 0.0) || !duplicate_distance.is_finite() {
            return Err(Error::param("duplicate_distance must be a finite non-negative value"));
        }
        if !(boundary_thickness > 0.0) || !boundary_thickness.is_finite() {
            return Err(Error::param("boundary_thickness must be positive"));
        }
        Ok(Self {
            segments: BTreeMap::new(),
            duplicate_distance,
            boundary_thickness,
            next_id: 0,
        })
    }

    pub fn duplicate_distance(&self) -> f64 {
        self.duplicate_distance
    }

    pub fn boundary_thickness(&self) -> f64 {
        self.boundary_thickness
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Segment> {
        self.segments.get(&id)
    }

    pub fn segments(&self) -> &BTreeMap<u64, Segment> {
        &self.segments
    }

    pub fn iter(&self) -> impl Iterator<Item = &Segment> {
        self.segments.values()
    }

    /// Adds `segments` with `creation_index = scan_index`. The map assigns
    /// fresh ids in input order and returns them.
    pub fn insert_segments(&mut self, segments: Vec<Segment>, scan_index: usize) -> Vec<u64> {
        segments
            .into_iter()
            .map(|mut s| {
                let id = self.next_id;
                self.next_id += 1;
                s.id = id;
                s.creation_index = scan_index;
                self.segments.insert(id, s);
                id
            })
            .collect()
    }

    /// Walks segments from newest to oldest (creation index, then id) and
    /// removes every older segment whose centroid lies within
    /// `duplicate_distance` of a surviving newer one. Returns removed ids.
    pub fn remove_duplicates(&mut self) -> Vec<u64> {
        self.remove_duplicates_among(|_| true)
    }

    /// [`TargetMap::remove_duplicates`] restricted to the segments accepted by
    /// `scope`; the others are neither compared nor removed.
    pub fn remove_duplicates_among(&mut self, scope: impl Fn(&Segment) -> bool) -> Vec<u64> {
        let members: Vec<&Segment> = self.segments.values().filter(|s| scope(s)).collect();
        if members.len() < 2 {
            return Vec::new();
        }
        let rank = |s: &Segment| (s.creation_index, s.id);
        let tree = KdTree::build(
            members
                .iter()
                .map(|s| (s.id, s.centroid.coords.into()))
                .collect(),
        );
        let mut order = members;
        order.sort_by_key(|s| std::cmp::Reverse(rank(s)));
        let mut removed = std::collections::BTreeSet::new();
        for s in order {
            if removed.contains(&s.id) {
                continue;
            }
            for n in tree.within_radius(&s.centroid.coords.into(), self.duplicate_distance) {
                if n.id == s.id || removed.contains(&n.id) {
                    continue;
                }
                if rank(&self.segments[&n.id]) < rank(s) {
                    removed.insert(n.id);
                }
            }
        }
        for id in &removed {
            self.segments.remove(id);
        }
        removed.into_iter().collect()
    }

    /// Re-expresses each segment through `new(c) ∘ old(c)⁻¹` for its creation
    /// index `c`, then removes duplicates. Segments whose pose is unchanged
    /// are left bit-exact.
    pub fn update_poses(&mut self, old: &Trajectory, new: &Trajectory) -> Result<Vec<u64>> {
        for s in self.segments.values() {
            let c = s.creation_index;
            if old.get(c).is_none() || new.get(c).is_none() {
                return Err(Error::MissingPose(c));
            }
        }
        for s in self.segments.values_mut() {
            let c = s.creation_index;
            let (o, n) = (old.get(c).unwrap(), new.get(c).unwrap());
            if o == n {
                continue;
            }
            s.transform(&n.compose(&o.inverse()));
        }
        Ok(self.remove_duplicates())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Writes the `SEGMAP1` map file. See the README for the layout.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAP_MAGIC)?;
        w.write_all(&[MAP_VERSION])?;
        wire::write_f64(w, self.duplicate_distance)?;
        wire::write_f64(w, self.boundary_thickness)?;
        wire::write_u64(w, self.next_id)?;
        wire::write_u64(w, self.segments.len() as u64)?;
        for s in self.segments.values() {
            wire::write_u64(w, s.id)?;
            wire::write_u64(w, s.creation_index as u64)?;
            for v in s.centroid.iter() {
                wire::write_f64(w, *v)?;
            }
            match &s.feature {
                Some(f) => {
                    w.write_all(&[1])?;
                    f.write_to(w)?;
                }
                None => w.write_all(&[0])?,
            }
            wire::write_u64(w, s.points.len() as u64)?;
            for p in &s.points {
                for v in p.iter() {
                    wire::write_f64(w, *v)?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        const WHAT: &str = "map";
        let mut magic = [0u8; 7];
        wire::read_exact(r, &mut magic, WHAT)?;
        if &magic[..6] != MAP_MAGIC {
            return Err(Error::format(WHAT, "missing SEGMAP header"));
        }
        if magic[6] != MAP_VERSION {
            return Err(Error::Version(String::from_utf8_lossy(&magic).into_owned()));
        }
        let duplicate_distance = wire::read_f64(r, WHAT)?;
        let boundary_thickness = wire::read_f64(r, WHAT)?;
        let mut map = TargetMap::new(duplicate_distance, boundary_thickness)
            .map_err(|e| Error::format(WHAT, e.to_string()))?;
        map.next_id = wire::read_u64(r, WHAT)?;
        let count = wire::read_u64(r, WHAT)?;
        let read_point = |r: &mut dyn Read| -> Result<Point3> {
            let mut r = r;
            let p = Point3::new(
                wire::read_f64(&mut r, WHAT)?,
                wire::read_f64(&mut r, WHAT)?,
                wire::read_f64(&mut r, WHAT)?,
            );
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::format(WHAT, "non-finite coordinate"));
            }
            Ok(p)
        };
        for _ in 0..count {
            let id = wire::read_u64(r, WHAT)?;
            if id >= map.next_id || map.segments.contains_key(&id) {
                return Err(Error::format(WHAT, format!("invalid or repeated segment id {id}")));
            }
            let creation_index = wire::read_u64(r, WHAT)? as usize;
            let centroid = read_point(r)?;
            let feature = match wire::read_u8(r, WHAT)? {
                0 => None,
                1 => Some(FeatureVector::read_from(r)?),
                t => return Err(Error::format(WHAT, format!("bad feature flag {t}"))),
            };
            let n = wire::read_u64(r, WHAT)?;
            let mut points = Vec::with_capacity((n as usize).min(1 << 20));
            for _ in 0..n {
                points.push(read_point(r)?);
            }
            map.segments.insert(
                id,
                Segment {
                    id,
                    points,
                    centroid,
                    creation_index,
                    feature,
                },
            );
        }
        Ok(map)
    }
}

impl SegmentLookup for TargetMap {
    fn segment(&self, id: u64) -> Option<&Segment> {
        self.get(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Pose;
    use crate::descriptors::{describe, DescriptorParams};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(c: Point3) -> Segment {
        let pts = (0..8)
            .map(|i| c + Vector3::new((i & 1) as f64 * 0.1, (i >> 1 & 1) as f64 * 0.1, (i >> 2) as f64 * 0.1))
            .collect();
        Segment::new(0, pts, 0)
    }

    fn at(x: f64) -> Segment {
        let mut s = Segment::new(0, vec![Point3::new(x, 0.0, 0.0)], 0);
        s.centroid = Point3::new(x, 0.0, 0.0);
        s
    }

    #[test]
    fn filter_incomplete_cases() {
        let c = Point3::origin();
        let inside = Segment::new(0, vec![Point3::new(56.9, 0.0, 0.0)], 0);
        let straddle = Segment::new(1, vec![Point3::new(10.0, 0.0, 0.0), Point3::new(58.5, 0.0, 0.0)], 0);
        let kept = filter_incomplete(vec![inside, straddle], &c, 60.0, 3.0).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, 0);
        assert!(filter_incomplete(vec![], &c, 60.0, 60.0).is_err());
    }

    #[test]
    fn insertion_is_additive_and_preserves_entries() {
        let mut map = TargetMap::new(1.0, 3.0).unwrap();
        let a = map.insert_segments(vec![at(0.0), at(5.0)], 0);
        let snapshot = map.get(a[0]).unwrap().clone();
        let b = map.insert_segments(vec![at(0.0)], 1);
        assert_eq!(map.len(), 3);
        assert_eq!(b, vec![2]);
        assert_eq!(map.get(a[0]).unwrap(), &snapshot);
        assert_eq!(map.get(2).unwrap().creation_index, 1);
    }

    #[test]
    fn duplicates_keep_newest() {
        let mut map = TargetMap::new(0.5, 3.0).unwrap();
        map.insert_segments(vec![at(0.0)], 0);
        map.insert_segments(vec![at(0.1)], 1);
        map.insert_segments(vec![at(10.0)], 1);
        assert_eq!(map.remove_duplicates(), vec![0]);
        assert_eq!(map.len(), 2);
        assert!(map.get(1).is_some() && map.get(2).is_some());
    }

    /// Direct simulation of the newest-first scan without a spatial index.
    fn brute_dedup(items: &[(usize, f64)], d: f64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse((items[i].0, i)));
        let mut alive = vec![true; items.len()];
        for &i in &order {
            if !alive[i] {
                continue;
            }
            for j in 0..items.len() {
                if j != i && alive[j] && (items[j].0, j) < (items[i].0, i) && (items[i].1 - items[j].1).abs() <= d {
                    alive[j] = false;
                }
            }
        }
        (0..items.len()).filter(|&i| alive[i]).collect()
    }

    #[test]
    fn chain_matches_order_simulation() {
        let items: Vec<(usize, f64)> = (0..5).map(|i| (i, 0.4 * i as f64)).collect();
        let mut map = TargetMap::new(0.5, 3.0).unwrap();
        for (scan, x) in &items {
            map.insert_segments(vec![at(*x)], *scan);
        }
        map.remove_duplicates();
        let kept: Vec<usize> = map.iter().map(|s| s.id as usize).collect();
        assert_eq!(kept, brute_dedup(&items, 0.5));
        assert_eq!(kept, vec![0, 2, 4]);
    }

    #[test]
    fn update_with_same_trajectory_is_noop() {
        let mut map = TargetMap::new(1.0, 3.0).unwrap();
        map.insert_segments(vec![blob(Point3::new(1.0, 2.0, 3.0))], 0);
        map.insert_segments(vec![blob(Point3::new(5.0, 2.0, 3.0))], 1);
        let traj = Trajectory::from_sequence([Pose::from_yaw(0.3, Vector3::new(1.0, 2.0, 0.0)), Pose::identity()]);
        let before = map.clone();
        assert!(map.update_poses(&traj, &traj).unwrap().is_empty());
        assert_eq!(map, before);
    }

    #[test]
    fn update_missing_pose_errors() {
        let mut map = TargetMap::new(1.0, 3.0).unwrap();
        map.insert_segments(vec![at(0.0)], 4);
        let traj = Trajectory::from_sequence([Pose::identity()]);
        assert!(matches!(map.update_poses(&traj, &traj), Err(Error::MissingPose(4))));
    }

    #[test]
    fn global_shift_moves_all_centroids() {
        let mut map = TargetMap::new(0.5, 3.0).unwrap();
        map.insert_segments(vec![blob(Point3::new(0.0, 0.0, 0.0))], 0);
        map.insert_segments(vec![blob(Point3::new(20.0, 0.0, 0.0))], 1);
        let old = Trajectory::from_sequence([Pose::from_yaw(0.1, Vector3::zeros()), Pose::from_yaw(0.4, Vector3::new(3.0, 0.0, 0.0))]);
        let shift = Pose::from_translation(Vector3::new(2.0, -1.0, 0.5));
        let new = old.transformed(&shift);
        let before: Vec<Point3> = map.iter().map(|s| s.centroid).collect();
        map.update_poses(&old, &new).unwrap();
        for (b, s) in before.iter().zip(map.iter()) {
            assert!((s.centroid - b - Vector3::new(2.0, -1.0, 0.5)).norm() < 1e-9);
        }
    }

    #[test]
    fn drift_correction_merges_duplicate_views() {
        let mut map = TargetMap::new(1.0, 3.0).unwrap();
        // The same object seen twice; the second view drifted by 3 m.
        map.insert_segments(vec![blob(Point3::new(10.0, 0.0, 0.0))], 0);
        map.insert_segments(vec![blob(Point3::new(13.0, 0.0, 0.0))], 1);
        assert!(map.remove_duplicates().is_empty());
        let old = Trajectory::from_sequence([Pose::identity(), Pose::from_translation(Vector3::new(3.0, 0.0, 0.0))]);
        let new = Trajectory::from_sequence([Pose::identity(), Pose::identity()]);
        assert_eq!(map.update_poses(&old, &new).unwrap(), vec![0]);
        assert_eq!(map.len(), 1);
    }

    #[test]
    fn persistence_round_trip() {
        let mut map = TargetMap::new(1.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let segs: Vec<Segment> = (0..3)
            .map(|i| {
                let pts = (0..150)
                    .map(|_| Point3::new(rng.random::<f64>() + 5.0 * i as f64, rng.random(), rng.random()))
                    .collect();
                describe(&Segment::new(i, pts, 0), &DescriptorParams { sample_count: 500, seed: 1 }).unwrap()
            })
            .collect();
        map.insert_segments(segs, 2);
        map.insert_segments(vec![at(40.0)], 3);
        let mut buf = Vec::new();
        map.write_to(&mut buf).unwrap();
        let back = TargetMap::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, map);

        let mut v2 = buf.clone();
        v2[6] = b'2';
        assert!(matches!(TargetMap::read_from(&mut v2.as_slice()), Err(Error::Version(_))));
        assert!(matches!(TargetMap::read_from(&mut &buf[..buf.len() - 1]), Err(Error::Format { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn filter_never_drops_inner_segments(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let center = Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0);
                let segs: Vec<Segment> = (0..20).map(|i| {
                    let c = Point3::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0), 0.0);
                    let pts = (0..10).map(|_| c + Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random::<f64>())).collect();
                    Segment::new(i, pts, 0)
                }).collect();
                let kept = filter_incomplete(segs.clone(), &center, 60.0, 3.0).unwrap();
                for s in &segs {
                    let oracle = s.points.iter().all(|p| {
                        let d = horizontal_distance(p, &center);
                        d <= 57.0 || d > 60.0
                    });
                    prop_assert_eq!(kept.iter().any(|k| k.id == s.id), oracle);
                }
            }

            #[test]
            fn dedup_is_idempotent_and_separates(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut map = TargetMap::new(1.0, 3.0).unwrap();
                for scan in 0..10 {
                    let segs = (0..5).map(|_| {
                        let c = Point3::new(rng.random_range(0.0..8.0), rng.random_range(0.0..8.0), 0.0);
                        let mut s = Segment::new(0, vec![c], 0);
                        s.centroid = c;
                        s
                    }).collect();
                    map.insert_segments(segs, scan);
                }
                map.remove_duplicates();
                let once = map.clone();
                prop_assert!(map.remove_duplicates().is_empty());
                prop_assert_eq!(&map, &once);
                let cs: Vec<Point3> = map.iter().map(|s| s.centroid).collect();
                for i in 0..cs.len() {
                    for j in i + 1..cs.len() {
                        prop_assert!((cs[i] - cs[j]).norm() > 1.0);
                    }
                }
            }
        }
    }
}
