//! Scan-by-scan orchestration: local segmentation and description, matching
//! against the target map, geometric verification and map maintenance.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cloud::{
    extract_cylindrical_neighborhood, transform_cloud, voxel_grid_filter, Point3, PointCloud, Pose,
    Trajectory,
};
use crate::config::SegmenterKind;
use crate::descriptors::describe_all;
use crate::error::{Error, Result};
use crate::eval::{EvalRecord, Outcome, StageTimings};
use crate::forest::{build_pair_feature, ForestModel, PairFeature, TrainingSet};
use crate::geomverify::{ransac_verify, LoopClosure};
use crate::matching::{classify_candidates, CandidatePair, FeatureIndex};
use crate::segmentation::{euclidean_segmenter, region_growing_segmenter, remove_ground, Segment};
use crate::targetmap::{filter_incomplete, TargetMap};

pub use crate::config::{Mode, PipelineConfig};

/// Index is rebuilt once the eligible target set outgrows it by this factor.
const INDEX_GROWTH: f64 = 1.1;

/// How many times each stage has run; segmentation and description run once
/// per processed scan.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageCounters {
    pub scans: usize,
    pub segmentation: usize,
    pub description: usize,
    pub index_builds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    pub scan_index: usize,
    pub closure: Option<LoopClosure>,
    pub timings: StageTimings,
    /// Described source segments that survived the boundary filter.
    pub segments: usize,
    pub candidates: usize,
    pub matches: usize,
    /// Ids of the target segments that were eligible for matching.
    pub eligible_targets: usize,
}

/// A labelled candidate pair produced while generating training data.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub feature: PairFeature,
    pub is_match: bool,
    pub source_scan: usize,
    pub target_id: u64,
    pub source_centroid: Point3,
    pub target_centroid: Point3,
}

struct IndexCache {
    index: FeatureIndex,
}

pub struct Pipeline {
    config: PipelineConfig,
    map: TargetMap,
    model: Option<ForestModel>,
    index: Option<IndexCache>,
    /// Cumulative travel at each processed scan.
    travel: BTreeMap<usize, f64>,
    travelled: f64,
    last_position: Option<Point3>,
    counters: StageCounters,
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

impl Pipeline {
    /// A pipeline with an empty map.
    pub fn new(config: PipelineConfig, model: Option<ForestModel>) -> Result<Self> {
        let map = TargetMap::new(config.duplicate_distance, config.boundary_thickness)?;
        Self::with_map(config, map, model)
    }

    /// A pipeline over an existing map, e.g. one loaded from disk.
    pub fn with_map(config: PipelineConfig, map: TargetMap, model: Option<ForestModel>) -> Result<Self> {
        config.validate()?;
        if matches!(config.classifier, crate::config::ClassifierKind::Forest) && model.is_none() {
            return Err(Error::MissingModel);
        }
        Ok(Self {
            config,
            map,
            model,
            index: None,
            travel: BTreeMap::new(),
            travelled: 0.0,
            last_position: None,
            counters: StageCounters::default(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn map(&self) -> &TargetMap {
        &self.map
    }

    pub fn into_map(self) -> TargetMap {
        self.map
    }

    pub fn counters(&self) -> StageCounters {
        self.counters
    }

    pub fn travelled(&self) -> f64 {
        self.travelled
    }

    /// Travel recorded when `scan_index` was processed.
    pub fn travel_at(&self, scan_index: usize) -> Option<f64> {
        self.travel.get(&scan_index).copied()
    }

    fn advance(&mut self, scan_index: usize, pose: &Pose) {
        let p = pose.position();
        if let Some(last) = self.last_position {
            self.travelled += (p - last).norm();
        }
        self.last_position = Some(p);
        self.travel.insert(scan_index, self.travelled);
    }

    /// Cylinder extraction, voxel filter, ground removal, clustering and
    /// boundary filtering of a global-frame cloud around `pose`.
    fn segment(&mut self, scan_index: usize, cloud: &PointCloud, pose: &Pose) -> Result<Vec<Segment>> {
        let c = &self.config;
        let center = pose.position();
        let local = extract_cylindrical_neighborhood(cloud, &center, c.neighborhood_radius)?;
        let filtered = voxel_grid_filter(&local, c.voxel_leaf, c.voxel_min_points)?;
        let above = remove_ground(&filtered, &c.segmentation)?;
        let mut segments = match c.segmenter {
            SegmenterKind::Euclidean => euclidean_segmenter(&above, &c.segmentation)?,
            SegmenterKind::RegionGrowing => region_growing_segmenter(&above, &c.region_growing, &c.segmentation)?,
        };
        for s in &mut segments {
            s.creation_index = scan_index;
        }
        self.counters.segmentation += 1;
        filter_incomplete(segments, &center, c.neighborhood_radius, c.boundary_thickness)
    }

    fn describe(&mut self, segments: &[Segment]) -> Result<Vec<Segment>> {
        let out = describe_all(segments, &self.config.descriptor)?;
        self.counters.description += 1;
        Ok(out)
    }

    fn is_eligible(&self, s: &Segment) -> bool {
        match self.config.mode {
            Mode::Localization => true,
            Mode::LoopClosure => self
                .travel
                .get(&s.creation_index)
                .is_none_or(|&t| t <= self.travelled - self.config.exclusion_distance),
        }
    }

    fn is_recent(&self, s: &Segment) -> bool {
        self.travel
            .get(&s.creation_index)
            .is_some_and(|&t| t > self.travelled - self.config.exclusion_distance)
    }

    /// Rebuilds the feature index when it is missing, refers to removed
    /// segments, or the eligible set outgrew it.
    fn refresh_index(&mut self) -> Result<usize> {
        let eligible: Vec<&Segment> = self.map.iter().filter(|s| self.is_eligible(s)).collect();
        let rebuild = match &self.index {
            None => true,
            Some(cache) => {
                let stale = cache.index.ids().iter().any(|id| self.map.get(*id).is_none());
                stale || eligible.len() as f64 > INDEX_GROWTH * cache.index.len() as f64
            }
        };
        let n = eligible.len();
        if rebuild {
            let index = FeatureIndex::build(eligible)?;
            self.counters.index_builds += 1;
            self.index = Some(IndexCache { index });
        }
        Ok(n)
    }

    fn retrieve(&self, sources: &[Segment]) -> Result<Vec<CandidatePair>> {
        let index = &self.index.as_ref().expect("index refreshed").index;
        let mut pairs = Vec::new();
        for s in sources {
            pairs.extend(index.retrieve(s, self.config.knn)?);
        }
        Ok(pairs)
    }

    fn insert(&mut self, segments: Vec<Segment>, scan_index: usize) {
        self.map.insert_segments(segments, scan_index);
        // Odometry is only trusted locally: merge duplicate views among
        // recent segments and leave older ones for matching.
        let recent: std::collections::BTreeSet<u64> =
            self.map.iter().filter(|s| self.is_recent(s)).map(|s| s.id).collect();
        self.map.remove_duplicates_among(|s| recent.contains(&s.id));
    }

    /// Runs every stage on one scan given in the global frame. In
    /// loop-closure mode the scan's segments are added to the map after
    /// matching, so matching sees the map as it was before this scan.
    pub fn process_scan(&mut self, scan_index: usize, cloud: &PointCloud, pose: &Pose) -> Result<ScanResult> {
        if self.travel.keys().next_back().is_some_and(|&last| scan_index <= last) {
            return Err(Error::param("scans must arrive in increasing index order"));
        }
        self.advance(scan_index, pose);
        self.counters.scans += 1;
        let mut timings = StageTimings::default();

        let t = Instant::now();
        let segments = self.segment(scan_index, cloud, pose).map_err(|e| e.in_stage("segmentation"))?;
        timings.segmentation_ms = elapsed_ms(t);

        let t = Instant::now();
        let sources = self.describe(&segments).map_err(|e| e.in_stage("description"))?;
        timings.description_ms = elapsed_ms(t);

        let t = Instant::now();
        let (eligible, pairs, matches) = (|| -> Result<_> {
            let eligible = self.refresh_index()?;
            let pairs = self.retrieve(&sources)?;
            let matches = classify_candidates(
                &pairs,
                &sources,
                &self.map,
                &self.config.classifier_mode(),
                self.model.as_ref(),
            )?;
            Ok((eligible, pairs, matches))
        })()
        .map_err(|e| e.in_stage("matching"))?;
        timings.matching_ms = elapsed_ms(t);

        let t = Instant::now();
        let closure = ransac_verify(&matches, &self.config.verify, scan_index)
            .map_err(|e| e.in_stage("geometric verification"))?;
        timings.verification_ms = elapsed_ms(t);

        let n_segments = sources.len();
        if self.config.mode == Mode::LoopClosure {
            let t = Instant::now();
            self.insert(sources, scan_index);
            timings.matching_ms += elapsed_ms(t);
        }
        Ok(ScanResult {
            scan_index,
            closure,
            timings,
            segments: n_segments,
            candidates: pairs.len(),
            matches: matches.len(),
            eligible_targets: eligible,
        })
    }

    /// Like [`Pipeline::process_scan`] but labels every retrieved pair by the
    /// ground-truth centroid gate instead of classifying it.
    pub fn training_step(&mut self, scan_index: usize, cloud: &PointCloud, pose: &Pose) -> Result<Vec<LabeledPair>> {
        self.advance(scan_index, pose);
        self.counters.scans += 1;
        let segments = self.segment(scan_index, cloud, pose)?;
        let sources = self.describe(&segments)?;
        self.refresh_index()?;
        let pairs = self.retrieve(&sources)?;
        let gate = self.config.correspondence_gate;
        let mut out = Vec::with_capacity(pairs.len());
        for p in pairs {
            let s = sources.iter().find(|s| s.id == p.source_id).expect("source of retrieved pair");
            let t = self.map.get(p.target_id).expect("indexed target in map");
            out.push(LabeledPair {
                feature: build_pair_feature(s.feature.as_ref().unwrap(), t.feature.as_ref().unwrap()),
                is_match: (s.centroid - t.centroid).norm() <= gate,
                source_scan: scan_index,
                target_id: t.id,
                source_centroid: s.centroid,
                target_centroid: t.centroid,
            });
        }
        self.insert(sources, scan_index);
        Ok(out)
    }

    /// Re-expresses the map after a trajectory update (full duplicate
    /// removal included). Returns removed segment ids.
    pub fn update_poses(&mut self, old: &Trajectory, new: &Trajectory) -> Result<Vec<u64>> {
        let removed = self.map.update_poses(old, new)?;
        self.index = None;
        Ok(removed)
    }
}

/// Turns sensor-frame scans into the global-frame clouds the pipeline
/// consumes: applies the pose, enforces the minimum scan spacing and merges
/// the last `accumulate_scans` admitted scans.
pub struct ScanFeeder {
    spacing: f64,
    window: usize,
    last: Option<Point3>,
    recent: VecDeque<PointCloud>,
}

impl ScanFeeder {
    pub fn new(config: &PipelineConfig) -> Self {
        Self {
            spacing: config.scan_spacing,
            window: config.accumulate_scans.max(1),
            last: None,
            recent: VecDeque::new(),
        }
    }

    /// `None` when the scan is too close to the last admitted one.
    pub fn admit(&mut self, sensor_cloud: &PointCloud, pose: &Pose) -> Option<PointCloud> {
        let p = pose.position();
        // Relative slack so poses sampled exactly `spacing` apart are admitted.
        if self.last.is_some_and(|l| (p - l).norm() < self.spacing * (1.0 - 1e-9)) {
            return None;
        }
        self.last = Some(p);
        self.recent.push_back(transform_cloud(sensor_cloud, pose));
        while self.recent.len() > self.window {
            self.recent.pop_front();
        }
        let mut merged = PointCloud::with_frame(Vec::new(), "world");
        for c in &self.recent {
            merged.points.extend_from_slice(&c.points);
        }
        Some(merged)
    }
}

/// Closure verdict against the correction the closure should report.
pub fn judge_closure(closure: &LoopClosure, expected: &Pose, config: &PipelineConfig) -> Outcome {
    let dt = closure.transform.translation_distance_to(expected);
    let dr = closure.transform.rotation_angle_to(expected).to_degrees();
    if dt <= config.detection_translation_gate && dr <= config.detection_rotation_gate_deg {
        Outcome::TruePositive
    } else {
        Outcome::FalsePositive
    }
}

#[derive(Debug, Clone, Default)]
pub struct SequenceRun {
    pub records: Vec<EvalRecord>,
    pub closures: Vec<(LoopClosure, Outcome)>,
    /// Scans after which segmentation or description had not run exactly
    /// once per processed scan.
    pub counter_violations: usize,
}

impl SequenceRun {
    pub fn true_positives(&self) -> usize {
        self.closures.iter().filter(|(_, o)| *o == Outcome::TruePositive).count()
    }

    pub fn false_positives(&self) -> usize {
        self.closures.iter().filter(|(_, o)| *o == Outcome::FalsePositive).count()
    }
}

/// Feeds `(scan_index, sensor-frame cloud, pose)` items through the pipeline
/// and scores each accepted closure against `expected`.
pub fn run_sequence<I>(pipeline: &mut Pipeline, scans: I, expected: &Pose) -> Result<SequenceRun>
where
    I: IntoIterator<Item = Result<(usize, PointCloud, Pose)>>,
{
    let mut feeder = ScanFeeder::new(pipeline.config());
    let mut run = SequenceRun::default();
    let mut last_detection = 0.0;
    for item in scans {
        let (scan_index, cloud, pose) = item?;
        let Some(global) = feeder.admit(&cloud, &pose) else {
            continue;
        };
        let before = pipeline.counters();
        let result = pipeline.process_scan(scan_index, &global, &pose)?;
        let after = pipeline.counters();
        if after.segmentation != before.segmentation + 1 || after.description != before.description + 1 {
            run.counter_violations += 1;
        }
        let travelled = pipeline.travelled();
        let outcome = match &result.closure {
            Some(c) => judge_closure(c, expected, pipeline.config()),
            None => Outcome::None,
        };
        if outcome == Outcome::TruePositive {
            last_detection = travelled;
        }
        run.records.push(EvalRecord {
            scan_index,
            travelled_m: travelled,
            distance_since_detection_m: travelled - last_detection,
            outcome,
            timings: result.timings,
        });
        if let Some(c) = result.closure {
            run.closures.push((c, outcome));
        }
    }
    Ok(run)
}

/// Builds the map on the first traversal and labels the k-NN candidates of
/// every later scan against older segments by the correspondence gate.
pub fn collect_training_pairs<I>(scans: I, config: &PipelineConfig) -> Result<Vec<LabeledPair>>
where
    I: IntoIterator<Item = Result<(usize, PointCloud, Pose)>>,
{
    let mut config = config.clone();
    config.mode = Mode::LoopClosure;
    config.classifier = crate::config::ClassifierKind::L2;
    let mut feeder = ScanFeeder::new(&config);
    let mut pipeline = Pipeline::new(config, None)?;
    let mut out = Vec::new();
    for item in scans {
        let (scan_index, cloud, pose) = item?;
        if let Some(global) = feeder.admit(&cloud, &pose) {
            out.extend(pipeline.training_step(scan_index, &global, &pose)?);
        }
    }
    Ok(out)
}

/// Labelled pairs subsampled to `negative_ratio` negatives per positive.
pub fn generate_training_pairs<I>(scans: I, config: &PipelineConfig) -> Result<TrainingSet>
where
    I: IntoIterator<Item = Result<(usize, PointCloud, Pose)>>,
{
    let pairs = collect_training_pairs(scans, config)?;
    balance_pairs(&pairs, config.negative_ratio, config.training_seed)
}

/// Keeps every positive and a seeded random subset of at most
/// `ratio × positives` negatives, in input order.
pub fn balance_pairs(pairs: &[LabeledPair], ratio: f64, seed: u64) -> Result<TrainingSet> {
    let positives = pairs.iter().filter(|p| p.is_match).count();
    if positives == 0 {
        return Err(Error::NoRevisit);
    }
    let mut negatives: Vec<usize> = (0..pairs.len()).filter(|&i| !pairs[i].is_match).collect();
    let keep = ((positives as f64) * ratio).floor() as usize;
    if negatives.len() > keep {
        negatives.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        negatives.truncate(keep);
        negatives.sort_unstable();
    }
    let mut selected = vec![false; pairs.len()];
    for i in negatives {
        selected[i] = true;
    }
    let mut set = TrainingSet::new();
    for (i, p) in pairs.iter().enumerate() {
        if p.is_match || selected[i] {
            set.push(p.feature, p.is_match);
        }
    }
    Ok(set)
}
