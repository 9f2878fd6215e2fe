//! Per-segment shape description: seven eigenvalue measures plus a 640-bin
//! ensemble of shape-function histograms.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cloud::Point3;
use crate::error::{Error, Result};
use crate::pca::principal_components;
use crate::segmentation::Segment;
use crate::wire;

pub const EIGEN_LEN: usize = 7;
pub const ESF_BINS: usize = 64;
pub const ESF_HISTOGRAMS: usize = 10;
pub const ESF_LEN: usize = ESF_BINS * ESF_HISTOGRAMS;
/// Cells per axis of the occupancy grid used to trace sampled lines.
pub const OCCUPANCY_GRID: usize = 64;

const FEATURE_TAG: &[u8; 6] = b"SEGFV1";
/// Attempts to draw a non-degenerate triplet before counting it in bin 0.
const MAX_TRIPLET_DRAWS: usize = 10;

/// Block order inside the 640-value shape descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum EsfBlock {
    D2In = 0,
    D2Out,
    D2Mixed,
    D2Ratio,
    D3In,
    D3Out,
    D3Mixed,
    A3In,
    A3Out,
    A3Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub eigen: [f64; EIGEN_LEN],
    pub esf: Box<[f64; ESF_LEN]>,
}

impl FeatureVector {
    pub fn esf_block(&self, block: usize) -> &[f64] {
        &self.esf[block * ESF_BINS..(block + 1) * ESF_BINS]
    }

    /// Writes the `SEGFV1` little-endian record.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(FEATURE_TAG)?;
        for v in self.eigen.iter().chain(self.esf.iter()) {
            wire::write_f64(w, *v)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut tag = [0u8; 6];
        wire::read_exact(r, &mut tag, "feature vector")?;
        if &tag != FEATURE_TAG {
            return Err(Error::format("feature vector", "missing SEGFV1 tag"));
        }
        let mut eigen = [0.0; EIGEN_LEN];
        for v in &mut eigen {
            *v = wire::read_f64(r, "feature vector")?;
        }
        let mut esf = Box::new([0.0; ESF_LEN]);
        for v in esf.iter_mut() {
            *v = wire::read_f64(r, "feature vector")?;
        }
        Ok(Self { eigen, esf })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptorParams {
    pub sample_count: usize,
    pub seed: u64,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        Self {
            sample_count: 20_000,
            seed: 0,
        }
    }
}

/// Linearity, planarity, scattering, omnivariance, anisotropy, eigenentropy
/// and change of curvature of the point covariance, with eigenvalues
/// normalized to sum 1.
///
/// Rank-deficient covariances yield the limit values (coincident points are
/// treated like a line): never NaN.
pub fn eigenvalue_features(segment: &Segment) -> [f64; EIGEN_LEN] {
    const LINE_LIMIT: [f64; EIGEN_LEN] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let Some(pc) = principal_components(&segment.points) else {
        return LINE_LIMIT;
    };
    let sum: f64 = pc.values.iter().sum();
    if !(sum > 0.0) {
        return LINE_LIMIT;
    }
    let mut l = pc.values.map(|v| v / sum);
    for v in &mut l {
        if *v < 1e-12 {
            *v = 0.0;
        }
    }
    let [l1, l2, l3] = l;
    let entropy: f64 = l.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
    [
        (l1 - l2) / l1,
        (l2 - l3) / l1,
        l3 / l1,
        (l1 * l2 * l3).cbrt(),
        (l1 - l3) / l1,
        entropy,
        l3 / (l1 + l2 + l3),
    ]
}

/// Raw (unnormalized) shape-function counts, block order as [`EsfBlock`].
#[derive(Debug, Clone)]
pub struct ShapeHistograms {
    pub counts: Vec<[u64; ESF_BINS]>,
}

impl ShapeHistograms {
    /// Unit-mass blocks concatenated; empty blocks stay all-zero.
    pub fn normalized(&self) -> Box<[f64; ESF_LEN]> {
        let mut out = Box::new([0.0; ESF_LEN]);
        for (b, block) in self.counts.iter().enumerate() {
            let total: u64 = block.iter().sum();
            if total == 0 {
                continue;
            }
            for (i, &c) in block.iter().enumerate() {
                out[b * ESF_BINS + i] = c as f64 / total as f64;
            }
        }
        out
    }

    /// D2 distances regardless of occupancy class.
    pub fn d2_combined(&self) -> [u64; ESF_BINS] {
        let mut out = [0; ESF_BINS];
        for block in [EsfBlock::D2In, EsfBlock::D2Out, EsfBlock::D2Mixed] {
            for (o, c) in out.iter_mut().zip(&self.counts[block as usize]) {
                *o += c;
            }
        }
        out
    }
}

/// Segment points expressed in a canonical principal-axes frame, so the
/// occupancy grid does not depend on the segment's orientation.
struct CanonicalSegment {
    points: Vec<Vector3<f64>>,
    /// Radius of the centroid-centred bounding sphere.
    radius: f64,
    grid: OccupancyGrid,
}

impl CanonicalSegment {
    fn new(points: &[Point3]) -> Self {
        let pc = principal_components(points).expect("non-empty segment");
        let mut axes = pc.axes;
        for a in 0..2 {
            let axis: Vector3<f64> = axes.column(a).into_owned();
            let skew: f64 = points
                .iter()
                .map(|p| (p.coords - pc.mean).dot(&axis).powi(3))
                .sum();
            if skew < 0.0 {
                axes.set_column(a, &(-axis));
            }
        }
        let third = axes.column(0).cross(&axes.column(1));
        axes.set_column(2, &third);
        let to_local: Matrix3<f64> = axes.transpose();
        let local: Vec<Vector3<f64>> = points.iter().map(|p| to_local * (p.coords - pc.mean)).collect();
        let radius = local.iter().map(|q| q.norm()).fold(0.0, f64::max);
        let grid = OccupancyGrid::new(&local);
        Self {
            points: local,
            radius,
            grid,
        }
    }
}

struct OccupancyGrid {
    origin: Vector3<f64>,
    inv_cell: f64,
    bits: Vec<u64>,
}

impl OccupancyGrid {
    fn new(points: &[Vector3<f64>]) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for q in points {
            lo = lo.inf(q);
            hi = hi.sup(q);
        }
        let side = (hi - lo).max();
        let side = if side > 0.0 { side } else { 1.0 };
        let center = (lo + hi) / 2.0;
        let mut grid = Self {
            origin: center - Vector3::repeat(side / 2.0),
            inv_cell: OCCUPANCY_GRID as f64 / side,
            bits: vec![0; OCCUPANCY_GRID * OCCUPANCY_GRID * OCCUPANCY_GRID / 64],
        };
        for q in points {
            let v = grid.voxel(q);
            let idx = grid.linear(v);
            grid.bits[idx / 64] |= 1 << (idx % 64);
        }
        grid
    }

    #[inline]
    fn voxel(&self, q: &Vector3<f64>) -> [i32; 3] {
        let max = OCCUPANCY_GRID as i32 - 1;
        let f = |c: f64, o: f64| (((c - o) * self.inv_cell).floor() as i32).clamp(0, max);
        [
            f(q.x, self.origin.x),
            f(q.y, self.origin.y),
            f(q.z, self.origin.z),
        ]
    }

    #[inline]
    fn linear(&self, v: [i32; 3]) -> usize {
        (v[0] as usize * OCCUPANCY_GRID + v[1] as usize) * OCCUPANCY_GRID + v[2] as usize
    }

    #[inline]
    fn occupied(&self, v: [i32; 3]) -> bool {
        let idx = self.linear(v);
        self.bits[idx / 64] >> (idx % 64) & 1 == 1
    }

    /// (occupied, visited) counts over the voxels strictly between `a` and
    /// `b` on a 3D Bresenham line.
    fn trace(&self, a: [i32; 3], b: [i32; 3]) -> LineTrace {
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let steps = d.iter().map(|v| v.abs()).max().unwrap_or(0);
        let mut trace = LineTrace::default();
        if steps <= 1 {
            return trace;
        }
        let major = (0..3).max_by_key(|&i| (d[i].abs(), std::cmp::Reverse(i))).unwrap_or(0);
        let step = d.map(|v| v.signum());
        let abs = d.map(|v| v.abs());
        let mut err = [0i32; 3];
        for i in 0..3 {
            err[i] = 2 * abs[i] - abs[major];
        }
        let mut cur = a;
        for _ in 1..steps {
            for i in 0..3 {
                if i == major {
                    continue;
                }
                if err[i] > 0 {
                    cur[i] += step[i];
                    err[i] -= 2 * abs[major];
                }
                err[i] += 2 * abs[i];
            }
            cur[major] += step[major];
            trace.visited += 1;
            if self.occupied(cur) {
                trace.occupied += 1;
            }
        }
        trace
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct LineTrace {
    occupied: u32,
    visited: u32,
}

impl LineTrace {
    fn ratio(self) -> f64 {
        if self.visited == 0 {
            1.0
        } else {
            self.occupied as f64 / self.visited as f64
        }
    }

    fn add(self, other: LineTrace) -> LineTrace {
        LineTrace {
            occupied: self.occupied + other.occupied,
            visited: self.visited + other.visited,
        }
    }
}

/// 0 = inside occupied space, 1 = outside, 2 = mixed.
#[inline]
fn occupancy_class(t: LineTrace) -> usize {
    if t.visited == 0 || t.occupied == t.visited {
        0
    } else if t.occupied == 0 {
        1
    } else {
        2
    }
}

#[inline]
fn bin(x: f64) -> usize {
    ((x * ESF_BINS as f64).floor() as isize).clamp(0, ESF_BINS as isize - 1) as usize
}

fn draw_triplet(rng: &mut ChaCha8Rng, n: usize) -> [usize; 3] {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    let (lo, hi) = if i < j { (i, j) } else { (j, i) };
    let mut k = rng.random_range(0..n - 2);
    if k >= lo {
        k += 1;
    }
    if k >= hi {
        k += 1;
    }
    [i, j, k]
}

/// Samples `sample_count` point triplets and accumulates D2 (three pair
/// distances per triplet), D3 (square root of triangle area) and A3 (angle at
/// the first vertex), each split by how the connecting lines cross the
/// occupancy grid, plus the per-pair occupied-line ratio.
pub fn shape_histograms(
    segment: &Segment,
    sample_count: usize,
    rng_seed: u64,
) -> Result<ShapeHistograms> {
    let n = segment.points.len();
    if n < 3 {
        return Err(Error::TooFewPoints(segment.id, n));
    }
    if sample_count == 0 {
        return Err(Error::param("sample_count must be at least 1"));
    }
    let canon = CanonicalSegment::new(&segment.points);
    let voxels: Vec<[i32; 3]> = canon.points.iter().map(|q| canon.grid.voxel(q)).collect();
    let radius = if canon.radius > 0.0 { canon.radius } else { 1.0 };
    let diameter = 2.0 * radius;
    let max_area = 3.0 * 3f64.sqrt() / 4.0 * radius * radius;
    let min_area = 1e-12 * diameter * diameter;

    let mut counts = vec![[0u64; ESF_BINS]; ESF_HISTOGRAMS];
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for _ in 0..sample_count {
        let mut tri = draw_triplet(&mut rng, n);
        let mut area = 0.0;
        for attempt in 0..MAX_TRIPLET_DRAWS {
            if attempt > 0 {
                tri = draw_triplet(&mut rng, n);
            }
            let [a, b, c] = tri.map(|i| canon.points[i]);
            area = (b - a).cross(&(c - a)).norm() / 2.0;
            if area > min_area {
                break;
            }
        }
        let [i, j, k] = tri;
        let (pi, pj, pk) = (canon.points[i], canon.points[j], canon.points[k]);
        let t_ij = canon.grid.trace(voxels[i], voxels[j]);
        let t_ik = canon.grid.trace(voxels[i], voxels[k]);
        let t_jk = canon.grid.trace(voxels[j], voxels[k]);

        for (d, t) in [((pj - pi).norm(), t_ij), ((pk - pi).norm(), t_ik), ((pk - pj).norm(), t_jk)] {
            counts[EsfBlock::D2In as usize + occupancy_class(t)][bin(d / diameter)] += 1;
            counts[EsfBlock::D2Ratio as usize][bin(t.ratio())] += 1;
        }

        let degenerate = area <= min_area;
        let d3_bin = if degenerate { 0 } else { bin((area / max_area).sqrt()) };
        let all = t_ij.add(t_ik).add(t_jk);
        counts[EsfBlock::D3In as usize + occupancy_class(all)][d3_bin] += 1;

        let a3_bin = if degenerate {
            0
        } else {
            let u = pj - pi;
            let v = pk - pi;
            let cos = (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0);
            bin(cos.acos() / std::f64::consts::PI)
        };
        counts[EsfBlock::A3In as usize + occupancy_class(t_jk)][a3_bin] += 1;
    }
    Ok(ShapeHistograms { counts })
}

pub fn esf_features(
    segment: &Segment,
    sample_count: usize,
    rng_seed: u64,
) -> Result<Box<[f64; ESF_LEN]>> {
    Ok(shape_histograms(segment, sample_count, rng_seed)?.normalized())
}

/// Returns a copy of `segment` with its feature vector populated.
pub fn describe(segment: &Segment, params: &DescriptorParams) -> Result<Segment> {
    let esf = esf_features(segment, params.sample_count, params.seed)?;
    let mut out = segment.clone();
    out.feature = Some(FeatureVector {
        eigen: eigenvalue_features(segment),
        esf,
    });
    Ok(out)
}

/// Describes every segment; segments are processed in parallel and the
/// result keeps input order.
pub fn describe_all(segments: &[Segment], params: &DescriptorParams) -> Result<Vec<Segment>> {
    segments.par_iter().map(|s| describe(s, params)).collect()
}
