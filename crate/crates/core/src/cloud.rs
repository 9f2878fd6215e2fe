//! Geometry primitives and cloud-level filters shared by every stage.

use std::collections::HashMap;

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

pub type Point3 = nalgebra::Point3<f64>;

/// Tolerance on `R·Rᵀ − I` accepted by [`Pose::new`].
pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            frame_id: String::new(),
        }
    }

    pub fn with_frame(points: Vec<Point3>, frame_id: impl Into<String>) -> Self {
        Self {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    /// Rejects clouds carrying NaN or infinite coordinates.
    pub fn validate(&self) -> Result<()> {
        match self
            .points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            Some(i) => Err(Error::param(format!("point {i} has a non-finite coordinate"))),
            None => Ok(()),
        }
    }

    fn derive(&self, points: Vec<Point3>) -> Self {
        Self {
            points,
            frame_id: self.frame_id.clone(),
        }
    }
}

impl FromIterator<Point3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point3>>(iter: I) -> Self {
        PointCloud::new(iter.into_iter().collect())
    }
}

/// Rigid 6-DOF transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let dev = orthonormality_error(&rotation);
        if !(dev <= ORTHONORMAL_TOLERANCE) || rotation.determinant() <= 0.0 {
            return Err(Error::param(format!(
                "rotation is not a proper orthonormal matrix (deviation {dev:e})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::param("translation is not finite"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Accepts a rotation within `tolerance` of orthonormal and snaps it to the
    /// nearest proper rotation (SVD projection).
    pub fn from_approximate(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        tolerance: f64,
    ) -> Result<Self> {
        let dev = orthonormality_error(&rotation);
        if !(dev <= tolerance) || rotation.determinant() <= 0.0 {
            return Err(Error::param(format!(
                "rotation deviates from orthonormal by {dev:e} (tolerance {tolerance:e})"
            )));
        }
        Self::new(nearest_rotation(&rotation), translation)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    /// Rotation about +z by `yaw` radians followed by translation.
    pub fn from_yaw(yaw: f64, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn position(&self) -> Point3 {
        Point3::from(self.translation)
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation angle of `self⁻¹ ∘ other` in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let skew = Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        );
        (skew.norm() / 2.0).atan2((rel.trace() - 1.0) / 2.0)
    }

    pub fn translation_distance_to(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }

    /// Row-major `[R | t]`, 12 values.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r * r.transpose() - Matrix3::identity()).abs().max()
}

/// Closest proper rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    poses: Vec<(usize, Pose)>,
}

impl Trajectory {
    pub fn new(poses: Vec<(usize, Pose)>) -> Result<Self> {
        if poses.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::param("trajectory scan indices must be strictly increasing"));
        }
        Ok(Self { poses })
    }

    /// Poses indexed 0, 1, 2, … in order.
    pub fn from_sequence(poses: impl IntoIterator<Item = Pose>) -> Self {
        Self {
            poses: poses.into_iter().enumerate().collect(),
        }
    }

    pub fn get(&self, scan_index: usize) -> Option<&Pose> {
        self.poses
            .binary_search_by_key(&scan_index, |(i, _)| *i)
            .ok()
            .map(|i| &self.poses[i].1)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(usize, Pose)> {
        self.poses.iter()
    }

    /// Applies `correction ∘ pose` to every entry.
    pub fn transformed(&self, correction: &Pose) -> Trajectory {
        Trajectory {
            poses: self
                .poses
                .iter()
                .map(|(i, p)| (*i, correction.compose(p)))
                .collect(),
        }
    }
}

type VoxelKey = (i64, i64, i64);

fn voxel_key(p: &Point3, leaf: f64) -> VoxelKey {
    (
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    )
}

/// Replaces the points of every voxel holding at least `min_points_per_voxel`
/// points by their centroid. Output is ordered by voxel key.
pub fn voxel_grid_filter(
    cloud: &PointCloud,
    leaf: f64,
    min_points_per_voxel: usize,
) -> Result<PointCloud> {
    if !(leaf > 0.0) || !leaf.is_finite() {
        return Err(Error::param(format!("voxel leaf must be positive, got {leaf}")));
    }
    if min_points_per_voxel == 0 {
        return Err(Error::param("min_points_per_voxel must be at least 1"));
    }
    let mut voxels: HashMap<VoxelKey, (Vector3<f64>, usize)> =
        HashMap::with_capacity(cloud.len() / 2 + 1);
    for p in &cloud.points {
        let entry = voxels
            .entry(voxel_key(p, leaf))
            .or_insert((Vector3::zeros(), 0));
        entry.0 += p.coords;
        entry.1 += 1;
    }
    let mut kept: Vec<(VoxelKey, Point3)> = voxels
        .into_iter()
        .filter(|(_, (_, n))| *n >= min_points_per_voxel)
        .map(|(k, (sum, n))| (k, Point3::from(sum / n as f64)))
        .collect();
    kept.sort_unstable_by_key(|(k, _)| *k);
    Ok(cloud.derive(kept.into_iter().map(|(_, p)| p).collect()))
}

/// Keeps every k-th point, `k = round(1 / keep_ratio)`.
pub fn uniform_downsample(cloud: &PointCloud, keep_ratio: f64) -> Result<PointCloud> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::param(format!(
            "keep_ratio must lie in (0, 1], got {keep_ratio}"
        )));
    }
    let stride = ((1.0 / keep_ratio).round() as usize).max(1);
    Ok(cloud.derive(cloud.points.iter().step_by(stride).copied().collect()))
}

#[inline]
pub fn horizontal_distance(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    (dx * dx + dy * dy).sqrt()
}

/// Points within a vertical cylinder of `radius` around `center`.
pub fn extract_cylindrical_neighborhood(
    cloud: &PointCloud,
    center: &Point3,
    radius: f64,
) -> Result<PointCloud> {
    if !(radius > 0.0) {
        return Err(Error::param(format!("radius must be positive, got {radius}")));
    }
    Ok(cloud.derive(
        cloud
            .points
            .iter()
            .filter(|p| horizontal_distance(p, center) <= radius)
            .copied()
            .collect(),
    ))
}

pub fn transform_cloud(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    cloud.derive(cloud.points.iter().map(|p| pose.transform_point(p)).collect())
}

pub fn centroid(points: &[Point3]) -> Option<Point3> {
    if points.is_empty() {
        return None;
    }
    let sum = points
        .iter()
        .fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Some(Point3::from(sum / points.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, scale: f64, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random::<f64>() * scale,
                    rng.random::<f64>() * scale,
                    rng.random::<f64>() * scale,
                )
            })
            .collect()
    }

    #[test]
    fn voxel_collapses_colocated_points() {
        let cloud = PointCloud::new(vec![Point3::origin(); 5]);
        let out = voxel_grid_filter(&cloud, 0.1, 2).unwrap();
        assert_eq!(out.points, vec![Point3::origin()]);
    }

    #[test]
    fn voxel_drops_sparse_voxels() {
        let cloud = PointCloud::new(vec![Point3::new(1.0, 2.0, 3.0)]);
        assert!(voxel_grid_filter(&cloud, 0.1, 2).unwrap().is_empty());
        assert!(voxel_grid_filter(&PointCloud::default(), 0.1, 2)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn voxel_rejects_bad_params() {
        let cloud = PointCloud::new(vec![Point3::origin()]);
        assert!(voxel_grid_filter(&cloud, 0.0, 1).is_err());
        assert!(voxel_grid_filter(&cloud, -1.0, 1).is_err());
        assert!(voxel_grid_filter(&cloud, 0.1, 0).is_err());
    }

    #[test]
    fn voxel_matches_bucketing_oracle() {
        let cloud = random_cloud(10_000, 1.0, 11);
        let out = voxel_grid_filter(&cloud, 0.5, 1).unwrap();
        assert_eq!(out.len(), 8);
        // Exhaustive bucketing: each octant of the cube by explicit comparisons.
        for p in &out.points {
            let ix = p.x >= 0.5;
            let iy = p.y >= 0.5;
            let iz = p.z >= 0.5;
            let members: Vec<&Point3> = cloud
                .points
                .iter()
                .filter(|q| (q.x >= 0.5) == ix && (q.y >= 0.5) == iy && (q.z >= 0.5) == iz)
                .collect();
            let n = members.len() as f64;
            let mx = members.iter().map(|q| q.x).sum::<f64>() / n;
            let my = members.iter().map(|q| q.y).sum::<f64>() / n;
            let mz = members.iter().map(|q| q.z).sum::<f64>() / n;
            assert!((p.x - mx).abs() < 1e-12);
            assert!((p.y - my).abs() < 1e-12);
            assert!((p.z - mz).abs() < 1e-12);
        }
    }

    #[test]
    fn voxel_boundary_goes_to_higher_index() {
        let cloud = PointCloud::new(vec![Point3::new(0.5, 0.0, 0.0), Point3::new(0.49, 0.0, 0.0)]);
        let out = voxel_grid_filter(&cloud, 0.5, 1).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn voxel_idempotent_occupancy() {
        let cloud = random_cloud(3000, 2.0, 5);
        let once = voxel_grid_filter(&cloud, 0.1, 1).unwrap();
        let twice = voxel_grid_filter(&once, 0.1, 1).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn downsample_counts() {
        let cloud = random_cloud(10, 1.0, 1);
        let half = uniform_downsample(&cloud, 0.5).unwrap();
        let expected: Vec<Point3> = [0, 2, 4, 6, 8].iter().map(|&i| cloud.points[i]).collect();
        assert_eq!(half.points, expected);
        assert_eq!(uniform_downsample(&cloud, 1.0).unwrap(), cloud);
        let seven = random_cloud(7, 1.0, 2);
        assert_eq!(uniform_downsample(&seven, 0.5).unwrap().len(), 4);
        assert!(uniform_downsample(&cloud, 0.0).is_err());
        assert!(uniform_downsample(&cloud, 1.5).is_err());
    }

    #[test]
    fn cylinder_membership() {
        let center = Point3::origin();
        let cloud = PointCloud::new(vec![
            Point3::new(59.9, 0.0, 0.0),
            Point3::new(0.0, 0.0, 100.0),
            Point3::new(60.1, 0.0, 0.0),
        ]);
        let out = extract_cylindrical_neighborhood(&cloud, &center, 60.0).unwrap();
        assert_eq!(out.points, cloud.points[..2].to_vec());
        assert!(extract_cylindrical_neighborhood(&cloud, &center, 0.0).is_err());
    }

    #[test]
    fn cylinder_matches_filter_oracle() {
        let cloud: PointCloud = random_cloud(1000, 30.0, 3)
            .points
            .into_iter()
            .map(|p| Point3::new(p.x - 15.0, p.y - 15.0, p.z))
            .collect();
        let center = Point3::new(1.0, -2.0, 7.0);
        let out = extract_cylindrical_neighborhood(&cloud, &center, 10.0).unwrap();
        let oracle: Vec<Point3> = cloud
            .points
            .iter()
            .filter(|p| (p.x - center.x).hypot(p.y - center.y) <= 10.0)
            .copied()
            .collect();
        assert_eq!(out.points, oracle);
    }

    #[test]
    fn transform_round_trip() {
        let cloud = random_cloud(200, 10.0, 4);
        assert_eq!(transform_cloud(&cloud, &Pose::identity()), cloud);
        let shifted = transform_cloud(
            &PointCloud::new(vec![Point3::origin()]),
            &Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)),
        );
        assert_eq!(shifted.points[0], Point3::new(1.0, 2.0, 3.0));

        let pose = Pose::from_rotation(
            Rotation3::from_euler_angles(0.3, -1.1, 2.0),
            Vector3::new(5.0, -3.0, 0.5),
        );
        let back = transform_cloud(&transform_cloud(&cloud, &pose), &pose.inverse());
        for (a, b) in cloud.points.iter().zip(&back.points) {
            assert!((a - b).abs().max() < 1e-9);
        }
    }

    #[test]
    fn pose_validation() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 1e-3;
        assert!(Pose::new(m, Vector3::zeros()).is_err());
        assert!(Pose::from_approximate(m, Vector3::zeros(), 1e-2).is_ok());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Pose::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn trajectory_requires_increasing_indices() {
        let p = Pose::identity();
        assert!(Trajectory::new(vec![(0, p), (2, p)]).is_ok());
        assert!(Trajectory::new(vec![(2, p), (2, p)]).is_err());
        let t = Trajectory::new(vec![(0, p), (5, p)]).unwrap();
        assert!(t.get(5).is_some());
        assert!(t.get(3).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn transform_preserves_distances(
                rx in -3.2f64..3.2, ry in -1.5f64..1.5, rz in -3.2f64..3.2,
                tx in -50.0f64..50.0, ty in -50.0f64..50.0, tz in -5.0f64..5.0,
                seed in 0u64..1000,
            ) {
                let cloud = random_cloud(20, 20.0, seed);
                let pose = Pose::from_rotation(
                    Rotation3::from_euler_angles(rx, ry, rz),
                    Vector3::new(tx, ty, tz),
                );
                let moved = transform_cloud(&cloud, &pose);
                for i in 0..cloud.len() {
                    for j in (i + 1)..cloud.len() {
                        let d0 = (cloud.points[i] - cloud.points[j]).norm();
                        let d1 = (moved.points[i] - moved.points[j]).norm();
                        prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
                    }
                }
            }

            #[test]
            fn cylinder_output_is_subset(seed in 0u64..1000, r in 0.5f64..20.0) {
                let cloud = random_cloud(300, 30.0, seed);
                let center = Point3::new(15.0, 15.0, 0.0);
                let out = extract_cylindrical_neighborhood(&cloud, &center, r).unwrap();
                let expected = cloud.points.iter().filter(|p| horizontal_distance(p, &center) <= r).count();
                prop_assert_eq!(out.len(), expected);
                for p in &out.points {
                    prop_assert!(cloud.points.contains(p));
                }
            }
        }
    }
}
