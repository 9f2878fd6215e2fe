//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segmatch::descriptors::{FeatureVector, EIGEN_LEN, ESF_LEN};
use segmatch::forest::{train, ForestParams, PairFeature, TrainingSet, PAIR_FEATURE_LEN};
use segmatch::synthetic::{ObserveParams, World, WorldParams};
use segmatch::{CandidateMatch, ForestModel, PointCloud, Pose, Segment};

/// One global-frame scan of the default synthetic world at the start of the road.
pub fn scan(range: f64, density: f64, ground_points: usize) -> (PointCloud, Pose) {
    let world = World::generate(&WorldParams::default()).expect("world");
    let pose = world.poses(1.0)[0];
    let obs = ObserveParams { range, density, ground_points, noise: 0.02, seed: 0 };
    (world.observe(&pose, &obs, 0), pose)
}

/// `n` segments with uniform eigen features and empty shape histograms.
pub fn eigen_segments(n: usize, seed: u64) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|id| {
            let mut s = Segment::new(id, vec![segmatch::Point3::origin()], 0);
            s.feature = Some(FeatureVector {
                eigen: std::array::from_fn(|_| rng.random()),
                esf: Box::new([1.0 / 64.0; ESF_LEN]),
            });
            s
        })
        .collect()
}

/// Forest trained on random pairs where matches have small eigen deltas.
pub fn forest(n_samples: usize) -> (ForestModel, Vec<PairFeature>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut set = TrainingSet::new();
    let mut pairs = Vec::new();
    for i in 0..n_samples {
        let is_match = i % 10 == 0;
        let scale = if is_match { 0.05 } else { 1.0 };
        let v: [f64; PAIR_FEATURE_LEN] =
            std::array::from_fn(|k| if k < EIGEN_LEN { scale * rng.random::<f64>() } else { rng.random() });
        set.push(PairFeature(v), is_match);
        pairs.push(PairFeature(v));
    }
    (train(&set, &ForestParams::default()).expect("forest"), pairs)
}

/// Candidates with `inliers` consistent with a planted motion and
/// `outliers` random ones.
pub fn candidates(inliers: usize, outliers: usize, seed: u64) -> Vec<CandidateMatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let motion = Pose::from_yaw(0.4, segmatch::nalgebra::Vector3::new(5.0, -3.0, 0.2));
    let point = |rng: &mut ChaCha8Rng| segmatch::Point3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), rng.random_range(0.0..3.0));
    let mut out = Vec::new();
    for i in 0..inliers + outliers {
        let s = point(&mut rng);
        let t = if i < inliers { motion.transform_point(&s) } else { point(&mut rng) };
        out.push(CandidateMatch { source_id: i as u64, target_id: 1000 + i as u64, score: 1.0, source_centroid: s, target_centroid: t });
    }
    out
}
