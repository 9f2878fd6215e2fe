//! Geometric verification of candidate matches with RANSAC over centroids.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::{Point3, Pose};
use crate::error::{Error, Result};
use crate::matching::CandidateMatch;

const DEGENERACY_EPS: f64 = 1e-9;
const STOP_CONFIDENCE: f64 = 0.999;
const MAX_REFINE_ROUNDS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyParams {
    /// Inlier threshold on centroid residual (m).
    pub resolution: f64,
    pub min_cluster_size: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            resolution: 0.4,
            min_cluster_size: 4,
            max_iterations: 400,
            seed: 0,
        }
    }
}

impl VerifyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) {
            return Err(Error::param("ransac resolution must be positive"));
        }
        if self.min_cluster_size < 3 {
            return Err(Error::param("min_cluster_size must be at least 3"));
        }
        Ok(())
    }
}

/// An accepted closure: `transform` maps source centroids onto target ones.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopClosure {
    pub transform: Pose,
    pub inliers: Vec<CandidateMatch>,
    pub consensus_size: usize,
    pub source_scan_index: usize,
}

impl LoopClosure {
    pub fn max_residual(&self) -> f64 {
        self.inliers
            .iter()
            .map(|m| residual(&self.transform, m))
            .fold(0.0, f64::max)
    }
}

fn residual(pose: &Pose, m: &CandidateMatch) -> f64 {
    (pose.transform_point(&m.source_centroid) - m.target_centroid).norm()
}

/// Least-squares rigid transform mapping `source[i]` onto `target[i]`.
pub fn estimate_rigid_transform(pairs: &[(Point3, Point3)]) -> Result<Pose> {
    if pairs.len() < 3 {
        return Err(Error::Degenerate(format!(
            "{} correspondences, need at least 3",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let ms = pairs.iter().fold(Vector3::zeros(), |a, (s, _)| a + s.coords) / n;
    let mt = pairs.iter().fold(Vector3::zeros(), |a, (_, t)| a + t.coords) / n;
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, t) in pairs {
        let (ds, dt) = (s.coords - ms, t.coords - mt);
        h += ds * dt.transpose();
        spread += ds * ds.transpose();
    }
    // Collinear sources leave rotation about the line undetermined.
    let sv = spread.singular_values();
    let mut sorted = [sv[0], sv[1], sv[2]];
    sorted.sort_by(|a, b| b.total_cmp(a));
    if sorted[1] <= DEGENERACY_EPS * sorted[0].max(1.0) {
        return Err(Error::Degenerate("source centroids are collinear".into()));
    }

    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v * d * u.transpose();
    let t = mt - r * ms;
    Ok(Pose::new(crate::cloud::nearest_rotation(&r), t).expect("SVD yields a rotation"))
}

/// Greedy one-to-one inliers under `pose`: candidates in ascending residual
/// order, each source and target id used once. Returned sorted by index.
fn greedy_inliers(pose: &Pose, candidates: &[CandidateMatch], resolution: f64) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, m)| (residual(pose, m), i))
        .filter(|(r, _)| *r <= resolution)
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut used_s = std::collections::HashSet::new();
    let mut used_t = std::collections::HashSet::new();
    let mut out = Vec::new();
    for (_, i) in scored {
        let m = &candidates[i];
        if used_s.contains(&m.source_id) || used_t.contains(&m.target_id) {
            continue;
        }
        used_s.insert(m.source_id);
        used_t.insert(m.target_id);
        out.push(i);
    }
    out.sort_unstable();
    out
}

fn fit(candidates: &[CandidateMatch], idx: &[usize]) -> Result<Pose> {
    let pairs: Vec<(Point3, Point3)> = idx
        .iter()
        .map(|&i| (candidates[i].source_centroid, candidates[i].target_centroid))
        .collect();
    estimate_rigid_transform(&pairs)
}

/// Seeded RANSAC over candidate centroids. Returns a closure when the best
/// consensus, after refitting on its inliers, holds at least
/// `min_cluster_size` one-to-one matches all within `resolution`.
pub fn ransac_verify(
    candidates: &[CandidateMatch],
    params: &VerifyParams,
    source_scan_index: usize,
) -> Result<Option<LoopClosure>> {
    params.validate()?;
    let n = candidates.len();
    if n < 3 {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Vec<usize> = Vec::new();
    let mut needed = params.max_iterations;
    let mut iteration = 0;
    while iteration < needed.min(params.max_iterations) {
        iteration += 1;
        let sample = index::sample(&mut rng, n, 3).into_vec();
        let [a, b, c] = [&candidates[sample[0]], &candidates[sample[1]], &candidates[sample[2]]];
        if a.source_id == b.source_id
            || a.source_id == c.source_id
            || b.source_id == c.source_id
            || a.target_id == b.target_id
            || a.target_id == c.target_id
            || b.target_id == c.target_id
        {
            continue;
        }
        let Ok(pose) = fit(candidates, &sample) else {
            continue;
        };
        let inliers = greedy_inliers(&pose, candidates, params.resolution);
        if inliers.len() > best.len() {
            best = inliers;
            let ratio = best.len() as f64 / n as f64;
            let p_fail = 1.0 - ratio.powi(3);
            if p_fail <= f64::EPSILON {
                needed = iteration;
            } else {
                let k = ((1.0 - STOP_CONFIDENCE).ln() / p_fail.ln()).ceil();
                if k.is_finite() && k >= 0.0 {
                    needed = needed.min(k as usize);
                }
            }
        }
    }
    if best.len() < params.min_cluster_size {
        return Ok(None);
    }

    // Refit on the consensus and recompute until the set is stable.
    let mut set = best;
    let mut pose = fit(candidates, &set)?;
    for _ in 0..MAX_REFINE_ROUNDS {
        let next = greedy_inliers(&pose, candidates, params.resolution);
        if next == set || next.len() < params.min_cluster_size {
            break;
        }
        match fit(candidates, &next) {
            Ok(p) => {
                set = next;
                pose = p;
            }
            Err(_) => break,
        }
    }
    // The refit can push an inlier past the resolution; drop the worst until
    // every residual is in bounds.
    loop {
        let (worst_pos, worst) = set
            .iter()
            .enumerate()
            .map(|(k, &i)| (k, residual(&pose, &candidates[i])))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty set");
        if worst <= params.resolution {
            break;
        }
        set.remove(worst_pos);
        if set.len() < params.min_cluster_size {
            return Ok(None);
        }
        pose = match fit(candidates, &set) {
            Ok(p) => p,
            Err(_) => return Ok(None),
        };
    }
    if set.len() < params.min_cluster_size {
        return Ok(None);
    }
    let inliers: Vec<CandidateMatch> = set.iter().map(|&i| candidates[i]).collect();
    Ok(Some(LoopClosure {
        transform: pose,
        consensus_size: inliers.len(),
        inliers,
        source_scan_index,
    }))
}
