//! Candidate retrieval in eigen-feature space and pair classification.

use std::collections::BTreeMap;

use crate::cloud::Point3;
use crate::descriptors::EIGEN_LEN;
use crate::error::{Error, Result};
use crate::forest::{build_pair_feature, ForestModel};
use crate::segmentation::Segment;
use crate::spatial::KdTree;

/// Exact k-NN index over the eigenvalue block of described segments.
#[derive(Debug, Clone)]
pub struct FeatureIndex {
    tree: KdTree<EIGEN_LEN>,
}

/// A retrieved `(source, target)` pair before classification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePair {
    pub source_id: u64,
    pub target_id: u64,
    /// Euclidean distance between the eigen blocks.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateMatch {
    pub source_id: u64,
    pub target_id: u64,
    /// Match score in `[0, 1]`.
    pub score: f64,
    pub source_centroid: Point3,
    pub target_centroid: Point3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassifierMode {
    /// Keep pairs whose eigen distance is at most `threshold`.
    L2 { threshold: f64 },
    /// Keep pairs whose forest score is at least `w_threshold`.
    Forest { w_threshold: f64 },
}

/// Lookup of segments by id.
pub trait SegmentLookup {
    fn segment(&self, id: u64) -> Option<&Segment>;
}

impl SegmentLookup for [Segment] {
    fn segment(&self, id: u64) -> Option<&Segment> {
        self.iter().find(|s| s.id == id)
    }
}

impl SegmentLookup for Vec<Segment> {
    fn segment(&self, id: u64) -> Option<&Segment> {
        self.as_slice().segment(id)
    }
}

impl SegmentLookup for BTreeMap<u64, Segment> {
    fn segment(&self, id: u64) -> Option<&Segment> {
        self.get(&id)
    }
}

impl FeatureIndex {
    pub fn build<'a>(targets: impl IntoIterator<Item = &'a Segment>) -> Result<Self> {
        let entries = targets
            .into_iter()
            .map(|s| {
                s.feature
                    .as_ref()
                    .map(|f| (s.id, f.eigen))
                    .ok_or(Error::Undescribed(s.id))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tree: KdTree::build(entries),
        })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        self.tree.ids()
    }

    /// `min(k, len)` nearest targets by ascending eigen distance, ties broken
    /// by lower id.
    pub fn retrieve(&self, source: &Segment, k: usize) -> Result<Vec<CandidatePair>> {
        let feature = source.feature.as_ref().ok_or(Error::Undescribed(source.id))?;
        Ok(self
            .tree
            .nearest(&feature.eigen, k)
            .into_iter()
            .map(|n| CandidatePair {
                source_id: source.id,
                target_id: n.id,
                distance: n.distance,
            })
            .collect())
    }
}

pub fn build_index(targets: &[Segment]) -> Result<FeatureIndex> {
    FeatureIndex::build(targets)
}

pub fn retrieve_candidates(
    index: &FeatureIndex,
    source: &Segment,
    k: usize,
) -> Result<Vec<CandidatePair>> {
    index.retrieve(source, k)
}

fn described<'a>(lookup: &'a (impl SegmentLookup + ?Sized), id: u64) -> Result<&'a Segment> {
    let seg = lookup
        .segment(id)
        .ok_or_else(|| Error::param(format!("unknown segment id {id}")))?;
    if seg.feature.is_none() {
        return Err(Error::Undescribed(id));
    }
    Ok(seg)
}

/// Filters retrieved pairs with the selected classifier. In L2 mode the score
/// is `1 − d/threshold`; in forest mode it is the forest vote.
pub fn classify_candidates(
    pairs: &[CandidatePair],
    sources: &(impl SegmentLookup + ?Sized),
    targets: &(impl SegmentLookup + ?Sized),
    mode: &ClassifierMode,
    model: Option<&ForestModel>,
) -> Result<Vec<CandidateMatch>> {
    if matches!(mode, ClassifierMode::Forest { .. }) && model.is_none() {
        return Err(Error::MissingModel);
    }
    let mut out = Vec::new();
    for pair in pairs {
        let s = described(sources, pair.source_id)?;
        let t = described(targets, pair.target_id)?;
        let score = match *mode {
            ClassifierMode::L2 { threshold } => {
                if pair.distance > threshold {
                    continue;
                }
                if threshold > 0.0 {
                    1.0 - pair.distance / threshold
                } else {
                    1.0
                }
            }
            ClassifierMode::Forest { w_threshold } => {
                let (fs, ft) = (s.feature.as_ref().unwrap(), t.feature.as_ref().unwrap());
                let w = model.unwrap().score(&build_pair_feature(fs, ft));
                if w < w_threshold {
                    continue;
                }
                w
            }
        };
        out.push(CandidateMatch {
            source_id: s.id,
            target_id: t.id,
            score,
            source_centroid: s.centroid,
            target_centroid: t.centroid,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptors::{FeatureVector, ESF_LEN};
    use crate::forest::{train, DecisionTree, ForestParams, TrainingSet};
    use crate::spatial::squared_distance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(id: u64, eigen: [f64; EIGEN_LEN]) -> Segment {
        let mut s = Segment::new(id, vec![Point3::new(id as f64, 0.0, 0.0)], 0);
        s.feature = Some(FeatureVector {
            eigen,
            esf: Box::new([1.0 / 64.0; ESF_LEN]),
        });
        s
    }

    fn random_segments(n: usize, rng: &mut ChaCha8Rng) -> Vec<Segment> {
        (0..n as u64)
            .map(|id| seg(id, std::array::from_fn(|_| (rng.random::<f64>() * 20.0).round() / 20.0)))
            .collect()
    }

    fn oracle(targets: &[Segment], q: &[f64; EIGEN_LEN], k: usize) -> Vec<u64> {
        let mut all: Vec<(f64, u64)> = targets
            .iter()
            .map(|t| (squared_distance(&t.feature.as_ref().unwrap().eigen, q), t.id))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, id)| id).collect()
    }

    #[test]
    fn empty_index() {
        let index = build_index(&[]).unwrap();
        assert!(index.is_empty());
        assert!(index.retrieve(&seg(0, [0.1; 7]), 200).unwrap().is_empty());
    }

    #[test]
    fn undescribed_target_rejected() {
        let s = Segment::new(9, vec![Point3::origin()], 0);
        assert!(matches!(build_index(&[s]), Err(Error::Undescribed(9))));
    }

    #[test]
    fn retrieval_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Coarse quantization forces many distance ties.
        let targets = random_segments(1000, &mut rng);
        let index = build_index(&targets).unwrap();
        for _ in 0..50 {
            let q = seg(5000, std::array::from_fn(|_| (rng.random::<f64>() * 20.0).round() / 20.0));
            let got: Vec<u64> = index.retrieve(&q, 200).unwrap().iter().map(|p| p.target_id).collect();
            assert_eq!(got, oracle(&targets, &q.feature.as_ref().unwrap().eigen, 200));
        }
    }

    #[test]
    fn clamp_exact_hit_and_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut targets = random_segments(50, &mut rng);
        let copy = targets[7].feature.as_ref().unwrap().eigen;
        targets.push(seg(50, copy));
        let index = build_index(&targets).unwrap();
        let q = seg(99, copy);
        let pairs = index.retrieve(&q, 200).unwrap();
        assert_eq!(pairs.len(), 51);
        assert_eq!((pairs[0].target_id, pairs[0].distance), (7, 0.0));
        assert_eq!((pairs[1].target_id, pairs[1].distance), (50, 0.0));
    }

    #[test]
    fn l2_threshold_gate() {
        let src = vec![seg(0, [0.0; 7])];
        let tgt = vec![seg(1, [0.0; 7])];
        let mode = ClassifierMode::L2 { threshold: 0.0024 };
        let far = CandidatePair { source_id: 0, target_id: 1, distance: 0.0030 };
        let near = CandidatePair { distance: 0.0012, ..far };
        assert!(classify_candidates(&[far], &src, &tgt, &mode, None).unwrap().is_empty());
        let kept = classify_candidates(&[near], &src, &tgt, &mode, None).unwrap();
        assert_eq!(kept.len(), 1);
        assert!((kept[0].score - 0.5).abs() < 1e-12);
        assert!(classify_candidates(&[], &src, &tgt, &mode, None).unwrap().is_empty());
    }

    #[test]
    fn forest_requires_model() {
        let src = vec![seg(0, [0.0; 7])];
        let mode = ClassifierMode::Forest { w_threshold: 0.5 };
        assert!(matches!(
            classify_candidates(&[], &src, &src, &mode, None),
            Err(Error::MissingModel)
        ));
    }

    #[test]
    fn forest_keeps_identical_segments() {
        // Matches have zero eigen difference, non-matches a large one.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut set = TrainingSet::new();
        for i in 0..400 {
            let a = seg(0, std::array::from_fn(|_| rng.random()));
            let b = if i % 2 == 0 { a.clone() } else { seg(1, std::array::from_fn(|_| rng.random())) };
            let f = build_pair_feature(a.feature.as_ref().unwrap(), b.feature.as_ref().unwrap());
            set.push(f, i % 2 == 0);
        }
        let model = train(&set, &ForestParams::default()).unwrap();
        let a = seg(0, std::array::from_fn(|_| rng.random()));
        let b = Segment { id: 1, ..a.clone() };
        let pairs = [CandidatePair { source_id: 0, target_id: 1, distance: 0.0 }];
        let out = classify_candidates(
            &pairs,
            &vec![a],
            &vec![b],
            &ClassifierMode::Forest { w_threshold: 0.72 },
            Some(&model),
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].score > 0.9);
    }

    #[test]
    fn forest_output_is_thresholded_subset() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let sources = random_segments(10, &mut rng);
        let targets: Vec<Segment> = random_segments(30, &mut rng)
            .into_iter()
            .map(|mut s| {
                s.id += 100;
                s
            })
            .collect();
        let trees = (0..25).map(|i| DecisionTree::leaf(if i % 3 == 0 { 1.0 } else { 0.0 })).collect();
        let model = ForestModel::from_trees(trees);
        let index = build_index(&targets).unwrap();
        let pairs: Vec<CandidatePair> = sources.iter().flat_map(|s| index.retrieve(s, 5).unwrap()).collect();
        for w in [0.2, 0.36, 0.5] {
            let out = classify_candidates(&pairs, &sources, &targets, &ClassifierMode::Forest { w_threshold: w }, Some(&model)).unwrap();
            assert!(out.iter().all(|m| m.score >= w));
            assert!(out.iter().all(|m| pairs.iter().any(|p| p.source_id == m.source_id && p.target_id == m.target_id)));
            assert_eq!(out.len(), if w <= 9.0 / 25.0 { pairs.len() } else { 0 });
        }
    }
}
