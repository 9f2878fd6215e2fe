//! Ground removal and point-cluster extraction.

use std::collections::{HashMap, VecDeque};

use crate::cloud::{centroid, Point3, PointCloud, Pose};
use crate::descriptors::FeatureVector;
use crate::error::{Error, Result};
use crate::pca::principal_components;
use crate::spatial::PointGrid;

/// A connected point cluster, the unit of matching.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: u64,
    pub points: Vec<Point3>,
    pub centroid: Point3,
    /// Index of the scan this segment was extracted from.
    pub creation_index: usize,
    pub feature: Option<FeatureVector>,
}

impl Segment {
    /// Builds an undescribed segment; the centroid is the mean of `points`.
    pub fn new(id: u64, points: Vec<Point3>, creation_index: usize) -> Self {
        let centroid = centroid(&points).unwrap_or_else(Point3::origin);
        Self {
            id,
            points,
            centroid,
            creation_index,
            feature: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_described(&self) -> bool {
        self.feature.is_some()
    }

    /// Applies a rigid motion to points and centroid. The feature vector is
    /// rigid-motion invariant and kept as is.
    pub fn transform(&mut self, pose: &Pose) {
        for p in &mut self.points {
            *p = pose.transform_point(p);
        }
        self.centroid = pose.transform_point(&self.centroid);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroundRemoval {
    /// Drop every point with `z <= ground_height`.
    MinHeight,
    /// Drop points in flat, low, connected vertical columns.
    VoxelStatistics,
}

impl std::str::FromStr for GroundRemoval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-height" => Ok(GroundRemoval::MinHeight),
            "voxel-statistics" => Ok(GroundRemoval::VoxelStatistics),
            other => Err(Error::param(format!("unknown ground removal strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for GroundRemoval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GroundRemoval::MinHeight => "min-height",
            GroundRemoval::VoxelStatistics => "voxel-statistics",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationParams {
    pub cluster_distance: f64,
    pub min_segment_points: usize,
    pub max_segment_points: usize,
    pub ground_removal: GroundRemoval,
    pub ground_height: f64,
    /// Horizontal footprint of a column for [`GroundRemoval::VoxelStatistics`].
    pub ground_column_size: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            cluster_distance: 0.2,
            min_segment_points: 100,
            max_segment_points: 15_000,
            ground_removal: GroundRemoval::MinHeight,
            ground_height: 0.0,
            ground_column_size: 0.5,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cluster_distance > 0.0) {
            return Err(Error::param("cluster_distance must be positive"));
        }
        if self.min_segment_points == 0 || self.min_segment_points > self.max_segment_points {
            return Err(Error::param(
                "segment size bounds must satisfy 0 < min <= max",
            ));
        }
        if !(self.ground_column_size > 0.0) {
            return Err(Error::param("ground_column_size must be positive"));
        }
        if !self.ground_height.is_finite() {
            return Err(Error::param("ground_height must be finite"));
        }
        Ok(())
    }

    fn admits(&self, size: usize) -> bool {
        size >= self.min_segment_points && size <= self.max_segment_points
    }
}

// Voxel-statistics ground thresholds.
const COLUMN_MAX_VARIANCE: f64 = 0.01;
const COLUMN_MAX_MEAN_ABOVE_MIN: f64 = 0.3;
const COLUMN_MAX_STEP: f64 = 0.2;

pub fn remove_ground(cloud: &PointCloud, params: &SegmentationParams) -> Result<PointCloud> {
    params.validate()?;
    let points = match params.ground_removal {
        GroundRemoval::MinHeight => cloud
            .points
            .iter()
            .filter(|p| p.z > params.ground_height)
            .copied()
            .collect(),
        GroundRemoval::VoxelStatistics => {
            let ground = voxel_statistics_ground_mask(&cloud.points, params.ground_column_size);
            cloud
                .points
                .iter()
                .zip(ground)
                .filter(|(_, g)| !g)
                .map(|(p, _)| *p)
                .collect()
        }
    };
    Ok(PointCloud::with_frame(points, cloud.frame_id.clone()))
}

#[derive(Default)]
struct Column {
    members: Vec<usize>,
    mean: f64,
    candidate: bool,
}

/// Marks points belonging to the largest 4-connected component of flat, low
/// columns. Adjacent candidate columns join only when their mean heights
/// differ by at most `COLUMN_MAX_STEP`.
fn voxel_statistics_ground_mask(points: &[Point3], column: f64) -> Vec<bool> {
    let mut columns: HashMap<(i64, i64), Column> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        let key = ((p.x / column).floor() as i64, (p.y / column).floor() as i64);
        columns.entry(key).or_default().members.push(i);
    }
    for col in columns.values_mut() {
        let n = col.members.len() as f64;
        let zs = col.members.iter().map(|&i| points[i].z);
        let mean = zs.clone().sum::<f64>() / n;
        let min = zs.clone().fold(f64::INFINITY, f64::min);
        let var = zs.map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
        col.mean = mean;
        col.candidate = var < COLUMN_MAX_VARIANCE && mean - min <= COLUMN_MAX_MEAN_ABOVE_MIN;
    }

    let mut keys: Vec<(i64, i64)> = columns
        .iter()
        .filter(|(_, c)| c.candidate)
        .map(|(k, _)| *k)
        .collect();
    keys.sort_unstable();
    let mut component: HashMap<(i64, i64), usize> = HashMap::with_capacity(keys.len());
    let mut sizes: Vec<usize> = Vec::new();
    for &start in &keys {
        if component.contains_key(&start) {
            continue;
        }
        let label = sizes.len();
        sizes.push(0);
        let mut queue = VecDeque::from([start]);
        component.insert(start, label);
        while let Some(k) = queue.pop_front() {
            sizes[label] += 1;
            let mean = columns[&k].mean;
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let nk = (k.0 + dx, k.1 + dy);
                if component.contains_key(&nk) {
                    continue;
                }
                if let Some(nc) = columns.get(&nk) {
                    if nc.candidate && (nc.mean - mean).abs() <= COLUMN_MAX_STEP {
                        component.insert(nk, label);
                        queue.push_back(nk);
                    }
                }
            }
        }
    }

    let mut mask = vec![false; points.len()];
    // Lowest label wins ties, which is deterministic because keys are sorted.
    let Some(ground) = (0..sizes.len()).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
    else {
        return mask;
    };
    for (k, label) in &component {
        if *label == ground {
            for &i in &columns[k].members {
                mask[i] = true;
            }
        }
    }
    mask
}

/// Connected components under `dist(p, q) <= cluster_distance`, size-filtered.
///
/// Segment ids are assigned in ascending order of each component's first
/// point index, starting at 0; members keep input order.
pub fn euclidean_segmenter(cloud: &PointCloud, params: &SegmentationParams) -> Result<Vec<Segment>> {
    params.validate()?;
    let components = euclidean_components(&cloud.points, params.cluster_distance);
    Ok(components_to_segments(&cloud.points, components, params))
}

/// All connected components (unfiltered), each sorted ascending, ordered by
/// first index.
pub fn euclidean_components(points: &[Point3], distance: f64) -> Vec<Vec<usize>> {
    let grid = PointGrid::new(points, distance);
    let mut visited = vec![false; points.len()];
    let mut components = Vec::new();
    let mut queue = Vec::new();
    for seed in 0..points.len() {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let mut members = vec![seed];
        queue.push(seed);
        while let Some(i) = queue.pop() {
            grid.for_each_within(points, &points[i], distance, |j| {
                if !visited[j] {
                    visited[j] = true;
                    members.push(j);
                    queue.push(j);
                }
            });
        }
        members.sort_unstable();
        components.push(members);
    }
    components
}

fn components_to_segments(
    points: &[Point3],
    mut components: Vec<Vec<usize>>,
    params: &SegmentationParams,
) -> Vec<Segment> {
    components.retain(|c| params.admits(c.len()));
    components.sort_by_key(|c| c[0]);
    components
        .into_iter()
        .enumerate()
        .map(|(id, members)| {
            Segment::new(
                id as u64,
                members.into_iter().map(|i| points[i]).collect(),
                0,
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionGrowingParams {
    pub normal_radius: f64,
    /// Maximum angle between neighbouring normals, radians.
    pub smoothness_threshold: f64,
    /// Points below this curvature keep growing their region.
    pub curvature_threshold: f64,
}

#[derive(Debug, Clone, Copy)]
struct LocalSurface {
    normal: nalgebra::Vector3<f64>,
    curvature: f64,
}

/// Smoothness-constrained region growing.
///
/// Normals come from a plane fit over the `normal_radius` neighbourhood;
/// points with fewer than three neighbours have no normal and stay
/// unsegmented. Seeds are taken in ascending curvature order (ties by index).
/// A region admits a neighbour when the angle between its normal and the
/// normal of the point being expanded is below the smoothness threshold;
/// admitted points continue the growth only if their curvature is below the
/// curvature threshold.
pub fn region_growing_segmenter(
    cloud: &PointCloud,
    growing: &RegionGrowingParams,
    params: &SegmentationParams,
) -> Result<Vec<Segment>> {
    params.validate()?;
    if !(growing.normal_radius > 0.0) {
        return Err(Error::param("normal_radius must be positive"));
    }
    if !(growing.smoothness_threshold > 0.0) {
        return Err(Error::param("smoothness_threshold must be positive"));
    }
    let points = &cloud.points;
    let grid = PointGrid::new(points, growing.normal_radius);
    let neighbors: Vec<Vec<u32>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut nb = Vec::new();
            grid.for_each_within(points, p, growing.normal_radius, |j| {
                if j != i {
                    nb.push(j as u32);
                }
            });
            nb.sort_unstable();
            nb
        })
        .collect();

    let surfaces: Vec<Option<LocalSurface>> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if neighbors[i].len() < 3 {
                return None;
            }
            let local: Vec<Point3> = std::iter::once(*p)
                .chain(neighbors[i].iter().map(|&j| points[j as usize]))
                .collect();
            let pc = principal_components(&local)?;
            let sum: f64 = pc.values.iter().sum();
            let curvature = if sum > 0.0 { pc.values[2] / sum } else { 0.0 };
            Some(LocalSurface {
                normal: pc.axes.column(2).into_owned(),
                curvature,
            })
        })
        .collect();

    let mut order: Vec<usize> = (0..points.len()).filter(|&i| surfaces[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let ca = surfaces[a].map_or(0.0, |s| s.curvature);
        let cb = surfaces[b].map_or(0.0, |s| s.curvature);
        ca.total_cmp(&cb).then(a.cmp(&b))
    });

    let cos_limit = growing.smoothness_threshold.cos();
    let mut label: Vec<Option<usize>> = vec![None; points.len()];
    let mut regions: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for &seed in &order {
        if label[seed].is_some() {
            continue;
        }
        let region_id = regions.len();
        label[seed] = Some(region_id);
        let mut members = vec![seed];
        queue.push_back(seed);
        while let Some(cur) = queue.pop_front() {
            let cur_normal = surfaces[cur].expect("labelled points have normals").normal;
            for &j in &neighbors[cur] {
                let j = j as usize;
                if label[j].is_some() {
                    continue;
                }
                let Some(surf) = surfaces[j] else { continue };
                if cur_normal.dot(&surf.normal).abs() > cos_limit {
                    label[j] = Some(region_id);
                    members.push(j);
                    if surf.curvature < growing.curvature_threshold {
                        queue.push_back(j);
                    }
                }
            }
        }
        members.sort_unstable();
        regions.push(members);
    }
    Ok(components_to_segments(points, regions, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn blob(center: Point3, n: usize, radius: f64, rng: &mut ChaCha8Rng) -> Vec<Point3> {
        (0..n)
            .map(|_| {
                center
                    + Vector3::new(
                        rng.random_range(-radius..radius),
                        rng.random_range(-radius..radius),
                        rng.random_range(-radius..radius),
                    )
            })
            .collect()
    }

    fn params(min: usize) -> SegmentationParams {
        SegmentationParams {
            min_segment_points: min,
            ..SegmentationParams::default()
        }
    }

    #[test]
    fn min_height_ground_removal() {
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                pts.push(Point3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        let box_pts: Vec<Point3> = (0..100)
            .map(|i| Point3::new(1.0, 1.0, 0.5 + i as f64 * 0.01))
            .collect();
        pts.extend(&box_pts);
        let p = SegmentationParams {
            ground_height: 0.3,
            ..SegmentationParams::default()
        };
        let out = remove_ground(&PointCloud::new(pts), &p).unwrap();
        assert_eq!(out.points, box_pts);
        assert!(remove_ground(&PointCloud::default(), &p).unwrap().is_empty());
    }

    #[test]
    fn voxel_statistics_on_tilted_ground() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let slope = 8f64.to_radians().tan();
        let boxes = [(5.0, 5.0, 1.0, 1.2), (12.0, 8.0, 1.5, 2.0), (15.0, 15.0, 2.0, 1.0)];
        let ground_z = |x: f64, _y: f64| x * slope;
        let under_box = |x: f64, y: f64| {
            boxes
                .iter()
                .any(|&(cx, cy, half, _)| (x - cx).abs() <= half && (y - cy).abs() <= half)
        };
        let mut ground = Vec::new();
        while ground.len() < 20_000 {
            let x = rng.random_range(0.0..20.0);
            let y = rng.random_range(0.0..20.0);
            if under_box(x, y) {
                continue;
            }
            ground.push(Point3::new(x, y, ground_z(x, y) + rng.random_range(-0.02..0.02)));
        }
        let mut objects = Vec::new();
        for &(cx, cy, half, h) in &boxes {
            let base = ground_z(cx, cy);
            for _ in 0..3000 {
                // Sides and top of an axis-aligned box.
                let face = rng.random_range(0..5);
                let u = rng.random_range(-half..half);
                let v = rng.random_range(0.0..h);
                let p = match face {
                    0 => Point3::new(cx - half, cy + u, base + v),
                    1 => Point3::new(cx + half, cy + u, base + v),
                    2 => Point3::new(cx + u, cy - half, base + v),
                    3 => Point3::new(cx + u, cy + half, base + v),
                    _ => Point3::new(
                        cx + u,
                        cy + rng.random_range(-half..half),
                        base + h,
                    ),
                };
                objects.push(p);
            }
        }
        let mut all = ground.clone();
        all.extend(&objects);
        let p = SegmentationParams {
            ground_removal: GroundRemoval::VoxelStatistics,
            ..SegmentationParams::default()
        };
        let kept = remove_ground(&PointCloud::new(all), &p).unwrap();
        let kept_set: std::collections::HashSet<[u64; 3]> = kept
            .points
            .iter()
            .map(|q| [q.x.to_bits(), q.y.to_bits(), q.z.to_bits()])
            .collect();
        let key = |q: &Point3| [q.x.to_bits(), q.y.to_bits(), q.z.to_bits()];
        let ground_removed = ground.iter().filter(|q| !kept_set.contains(&key(q))).count();
        let objects_removed = objects.iter().filter(|q| !kept_set.contains(&key(q))).count();
        assert!(
            ground_removed as f64 >= 0.95 * ground.len() as f64,
            "ground removed {ground_removed}/{}",
            ground.len()
        );
        assert!(
            objects_removed as f64 <= 0.01 * objects.len() as f64,
            "objects removed {objects_removed}/{}",
            objects.len()
        );
    }

    #[test]
    fn two_blobs_two_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = blob(Point3::origin(), 150, 0.15, &mut rng);
        pts.extend(blob(Point3::new(5.0, 0.0, 0.0), 150, 0.15, &mut rng));
        let segs = euclidean_segmenter(&PointCloud::new(pts), &params(100)).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].id, 0);
        assert_eq!(segs[1].id, 1);
        assert_eq!(segs[0].len(), 150);
    }

    #[test]
    fn small_blob_discarded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = blob(Point3::origin(), 50, 0.1, &mut rng);
        assert!(euclidean_segmenter(&PointCloud::new(pts), &params(100))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn repeated_point_one_segment() {
        let p = Point3::new(1.5, -2.0, 3.25);
        let segs = euclidean_segmenter(&PointCloud::new(vec![p; 200]), &params(100)).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].centroid, p);
    }

    #[test]
    fn oversize_component_discarded() {
        let p = Point3::new(0.0, 0.0, 0.0);
        let sp = SegmentationParams {
            min_segment_points: 1,
            max_segment_points: 10,
            ..SegmentationParams::default()
        };
        assert!(euclidean_segmenter(&PointCloud::new(vec![p; 11]), &sp)
            .unwrap()
            .is_empty());
    }

    fn plane_patch(
        origin: Point3,
        u: Vector3<f64>,
        v: Vector3<f64>,
        n: usize,
        step: f64,
    ) -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(origin + u * (i as f64 * step) + v * (j as f64 * step));
            }
        }
        pts
    }

    fn growing(smooth: f64) -> RegionGrowingParams {
        RegionGrowingParams {
            normal_radius: 0.12,
            smoothness_threshold: smooth,
            curvature_threshold: 0.05,
        }
    }

    #[test]
    fn region_growing_flat_patch() {
        let pts = plane_patch(Point3::origin(), Vector3::x(), Vector3::y(), 30, 0.05);
        let segs =
            region_growing_segmenter(&PointCloud::new(pts), &growing(0.1), &params(100)).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].len(), 900);
    }

    #[test]
    fn region_growing_splits_perpendicular_patches() {
        // Floor in the xy plane and a wall in the xz plane sharing the x axis.
        let mut pts = plane_patch(Point3::new(0.0, 0.05, 0.0), Vector3::x(), Vector3::y(), 30, 0.05);
        pts.extend(plane_patch(Point3::new(0.0, 0.0, 0.05), Vector3::x(), Vector3::z(), 30, 0.05));
        let segs =
            region_growing_segmenter(&PointCloud::new(pts.clone()), &growing(0.1), &params(100))
                .unwrap();
        assert_eq!(segs.len(), 2);
        // Planted geometry oracle: each region lies on exactly one of the planes.
        for s in &segs {
            let on_floor = s.points.iter().all(|p| p.z.abs() < 1e-12);
            let on_wall = s.points.iter().all(|p| p.y.abs() < 1e-12);
            assert!(on_floor ^ on_wall);
        }
    }

    #[test]
    fn region_growing_sphere_single_region() {
        // Fibonacci sphere, radius 1, ~4000 points: spacing ~0.056 m.
        let n = 4000;
        let golden = PI * (3.0 - 5f64.sqrt());
        let pts: Vec<Point3> = (0..n)
            .map(|i| {
                let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - y * y).sqrt();
                let th = golden * i as f64;
                Point3::new(r * th.cos(), y, r * th.sin())
            })
            .collect();
        let segs =
            region_growing_segmenter(&PointCloud::new(pts), &growing(0.3), &params(100)).unwrap();
        assert_eq!(segs.len(), 1);
        assert!(segs[0].len() as f64 > 0.99 * n as f64);
    }

    #[test]
    fn region_growing_leaves_isolated_points() {
        let mut pts = plane_patch(Point3::origin(), Vector3::x(), Vector3::y(), 20, 0.05);
        pts.push(Point3::new(10.0, 10.0, 10.0));
        let sp = SegmentationParams {
            min_segment_points: 1,
            ..SegmentationParams::default()
        };
        let segs = region_growing_segmenter(&PointCloud::new(pts), &growing(0.1), &sp).unwrap();
        let total: usize = segs.iter().map(|s| s.len()).sum();
        assert_eq!(total, 400);
    }

    #[test]
    fn segmentation_is_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut pts = Vec::new();
        for c in 0..6 {
            pts.extend(blob(Point3::new(c as f64 * 3.0, 0.0, 0.0), 200, 0.3, &mut rng));
        }
        let shift = Vector3::new(123.25, -40.5, 7.0);
        let a = euclidean_segmenter(&PointCloud::new(pts.clone()), &params(50)).unwrap();
        let moved: Vec<Point3> = pts.iter().map(|p| p + shift).collect();
        let b = euclidean_segmenter(&PointCloud::new(moved), &params(50)).unwrap();
        assert_eq!(a.len(), b.len());
        for (sa, sb) in a.iter().zip(&b) {
            assert_eq!(sa.len(), sb.len());
            assert!(((sa.centroid + shift) - sb.centroid).abs().max() < 1e-9);
        }
    }

    #[test]
    fn segment_transform_moves_centroid() {
        let mut s = Segment::new(3, vec![Point3::new(1.0, 0.0, 0.0), Point3::new(3.0, 0.0, 0.0)], 4);
        let pose = Pose::from_rotation(
            Rotation3::from_axis_angle(&Vector3::z_axis(), PI / 2.0),
            Vector3::new(0.0, 0.0, 1.0),
        );
        s.transform(&pose);
        assert!((s.centroid - Point3::new(0.0, 2.0, 1.0)).norm() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;
        use rand::seq::SliceRandom;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn permutation_invariant_membership(seed in 0u64..10_000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = rng.random_range(50..600);
                let pts: Vec<Point3> = (0..n)
                    .map(|_| Point3::new(
                        rng.random_range(0.0..4.0),
                        rng.random_range(0.0..4.0),
                        rng.random_range(0.0..1.0),
                    ))
                    .collect();
                let sp = SegmentationParams { min_segment_points: 3, ..SegmentationParams::default() };
                let a = euclidean_segmenter(&PointCloud::new(pts.clone()), &sp).unwrap();
                let mut shuffled = pts.clone();
                shuffled.shuffle(&mut rng);
                let b = euclidean_segmenter(&PointCloud::new(shuffled), &sp).unwrap();
                prop_assert_eq!(a.len(), b.len());
                let canon = |segs: &[Segment]| {
                    let mut v: Vec<Vec<[u64; 3]>> = segs
                        .iter()
                        .map(|s| {
                            let mut m: Vec<[u64; 3]> = s
                                .points
                                .iter()
                                .map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()])
                                .collect();
                            m.sort_unstable();
                            m
                        })
                        .collect();
                    v.sort();
                    v
                };
                prop_assert_eq!(canon(&a), canon(&b));
                for sa in &a {
                    let sb = b.iter().find(|s| s.len() == sa.len()
                        && (s.centroid - sa.centroid).norm() < 1e-9);
                    prop_assert!(sb.is_some());
                }
            }
        }
    }
}
