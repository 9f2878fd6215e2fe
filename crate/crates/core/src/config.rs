//! Run configuration: a flat `key = value` text file with `#` comments.
//!
//! Unknown keys and malformed values are rejected with their line number.
//! Defaults follow the published parameter table where one exists; the
//! boundary thickness, duplicate distance, exclusion window, correspondence
//! and detection gates and the classifier thresholds are tuned values.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::descriptors::DescriptorParams;
use crate::error::{Error, Result};
use crate::forest::ForestParams;
use crate::geomverify::VerifyParams;
use crate::matching::ClassifierMode;
use crate::segmentation::{GroundRemoval, RegionGrowingParams, SegmentationParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Match against a map loaded from disk; the map is not modified.
    Localization,
    /// Build the map online and match against older parts of it.
    LoopClosure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Forest,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmenterKind {
    Euclidean,
    RegionGrowing,
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::param(format!(concat!("unknown ", $what, " `{}`"), other))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(Mode, "mode", "localization" => Mode::Localization, "loop-closure" => Mode::LoopClosure);
keyword_enum!(ClassifierKind, "classifier", "forest" => ClassifierKind::Forest, "l2" => ClassifierKind::L2);
keyword_enum!(SegmenterKind, "segmenter", "euclidean" => SegmenterKind::Euclidean, "region-growing" => SegmenterKind::RegionGrowing);

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Cylinder radius R around the robot (m).
    pub neighborhood_radius: f64,
    /// Incomplete-segment band b inside R (m).
    pub boundary_thickness: f64,
    pub voxel_leaf: f64,
    pub voxel_min_points: usize,
    pub segmenter: SegmenterKind,
    pub segmentation: SegmentationParams,
    pub region_growing: RegionGrowingParams,
    pub descriptor: DescriptorParams,
    pub knn: usize,
    pub classifier: ClassifierKind,
    pub l2_threshold: f64,
    pub forest_threshold: f64,
    pub forest: ForestParams,
    pub verify: VerifyParams,
    /// Minimum travel between admitted scans (m).
    pub scan_spacing: f64,
    pub mode: Mode,
    pub duplicate_distance: f64,
    /// Targets created within this much travel are not matched (m).
    pub exclusion_distance: f64,
    /// Training label gate on ground-truth centroid distance (m).
    pub correspondence_gate: f64,
    /// Negatives kept per positive when generating training pairs.
    pub negative_ratio: f64,
    pub training_seed: u64,
    pub detection_translation_gate: f64,
    pub detection_rotation_gate_deg: f64,
    /// Number of consecutive admitted scans merged into one local cloud.
    pub accumulate_scans: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            neighborhood_radius: 60.0,
            boundary_thickness: 3.0,
            voxel_leaf: 0.1,
            voxel_min_points: 2,
            segmenter: SegmenterKind::Euclidean,
            segmentation: SegmentationParams::default(),
            region_growing: RegionGrowingParams {
                normal_radius: 0.5,
                smoothness_threshold: 10f64.to_radians(),
                curvature_threshold: 0.05,
            },
            descriptor: DescriptorParams::default(),
            knn: 200,
            classifier: ClassifierKind::Forest,
            l2_threshold: 0.0024,
            forest_threshold: 0.72,
            forest: ForestParams::default(),
            verify: VerifyParams::default(),
            scan_spacing: 1.0,
            mode: Mode::LoopClosure,
            duplicate_distance: 1.0,
            exclusion_distance: 50.0,
            correspondence_gate: 1.0,
            negative_ratio: 50.0,
            training_seed: 0,
            detection_translation_gate: 2.0,
            detection_rotation_gate_deg: 5.0,
            accumulate_scans: 1,
        }
    }
}

fn parse_value<T: FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("invalid value `{value}`: {e}"))
}

impl PipelineConfig {
    pub fn classifier_mode(&self) -> ClassifierMode {
        match self.classifier {
            ClassifierKind::Forest => ClassifierMode::Forest {
                w_threshold: self.forest_threshold,
            },
            ClassifierKind::L2 => ClassifierMode::L2 {
                threshold: self.l2_threshold,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("neighborhood_radius", self.neighborhood_radius),
            ("boundary_thickness", self.boundary_thickness),
            ("voxel_leaf", self.voxel_leaf),
            ("scan_spacing", self.scan_spacing),
            ("correspondence_gate", self.correspondence_gate),
            ("negative_ratio", self.negative_ratio),
            ("detection_translation_gate", self.detection_translation_gate),
            ("detection_rotation_gate_deg", self.detection_rotation_gate_deg),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if self.boundary_thickness >= self.neighborhood_radius {
            return Err(Error::param("boundary_thickness must be smaller than neighborhood_radius"));
        }
        for (name, v) in [
            ("duplicate_distance", self.duplicate_distance),
            ("exclusion_distance", self.exclusion_distance),
            ("l2_threshold", self.l2_threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.forest_threshold) {
            return Err(Error::param("forest_threshold must lie in [0, 1]"));
        }
        if self.voxel_min_points == 0 || self.knn == 0 || self.accumulate_scans == 0 {
            return Err(Error::param("voxel_min_points, knn and accumulate_scans must be at least 1"));
        }
        if self.descriptor.sample_count == 0 {
            return Err(Error::param("esf_samples must be at least 1"));
        }
        if self.forest.n_trees == 0 || self.forest.min_leaf == 0 {
            return Err(Error::param("forest_trees and forest_min_leaf must be at least 1"));
        }
        self.segmentation.validate()?;
        self.verify.validate()
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "neighborhood_radius" => self.neighborhood_radius = parse_value(value)?,
            "boundary_thickness" => self.boundary_thickness = parse_value(value)?,
            "voxel_leaf" => self.voxel_leaf = parse_value(value)?,
            "voxel_min_points" => self.voxel_min_points = parse_value(value)?,
            "segmenter" => self.segmenter = parse_value(value)?,
            "cluster_distance" => self.segmentation.cluster_distance = parse_value(value)?,
            "min_segment_points" => self.segmentation.min_segment_points = parse_value(value)?,
            "max_segment_points" => self.segmentation.max_segment_points = parse_value(value)?,
            "ground_removal" => self.segmentation.ground_removal = parse_value::<GroundRemoval>(value)?,
            "ground_height" => self.segmentation.ground_height = parse_value(value)?,
            "ground_column_size" => self.segmentation.ground_column_size = parse_value(value)?,
            "normal_radius" => self.region_growing.normal_radius = parse_value(value)?,
            "smoothness_deg" => {
                self.region_growing.smoothness_threshold = parse_value::<f64>(value)?.to_radians()
            }
            "curvature_threshold" => self.region_growing.curvature_threshold = parse_value(value)?,
            "esf_samples" => self.descriptor.sample_count = parse_value(value)?,
            "descriptor_seed" => self.descriptor.seed = parse_value(value)?,
            "knn" => self.knn = parse_value(value)?,
            "classifier" => self.classifier = parse_value(value)?,
            "l2_threshold" => self.l2_threshold = parse_value(value)?,
            "forest_threshold" => self.forest_threshold = parse_value(value)?,
            "forest_trees" => self.forest.n_trees = parse_value(value)?,
            "forest_max_depth" => self.forest.max_depth = parse_value(value)?,
            "forest_min_leaf" => self.forest.min_leaf = parse_value(value)?,
            "forest_seed" => self.forest.seed = parse_value(value)?,
            "min_cluster_size" => self.verify.min_cluster_size = parse_value(value)?,
            "ransac_resolution" => self.verify.resolution = parse_value(value)?,
            "ransac_iterations" => self.verify.max_iterations = parse_value(value)?,
            "ransac_seed" => self.verify.seed = parse_value(value)?,
            "scan_spacing" => self.scan_spacing = parse_value(value)?,
            "mode" => self.mode = parse_value(value)?,
            "duplicate_distance" => self.duplicate_distance = parse_value(value)?,
            "exclusion_distance" => self.exclusion_distance = parse_value(value)?,
            "correspondence_gate" => self.correspondence_gate = parse_value(value)?,
            "negative_ratio" => self.negative_ratio = parse_value(value)?,
            "training_seed" => self.training_seed = parse_value(value)?,
            "detection_translation_gate" => self.detection_translation_gate = parse_value(value)?,
            "detection_rotation_gate_deg" => self.detection_rotation_gate_deg = parse_value(value)?,
            "accumulate_scans" => self.accumulate_scans = parse_value(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. `origin` names the source
    /// in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let err = |reason: String| Error::Parse {
                path: origin.to_string(),
                line: n + 1,
                reason,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            config.set(key, value).map_err(err)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }
}

impl fmt::Display for PipelineConfig {
    /// Every key with its current value, parseable by [`PipelineConfig::parse`].
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = &self.segmentation;
        let g = &self.region_growing;
        writeln!(f, "neighborhood_radius = {}", self.neighborhood_radius)?;
        writeln!(f, "boundary_thickness = {}", self.boundary_thickness)?;
        writeln!(f, "voxel_leaf = {}", self.voxel_leaf)?;
        writeln!(f, "voxel_min_points = {}", self.voxel_min_points)?;
        writeln!(f, "segmenter = {}", self.segmenter)?;
        writeln!(f, "cluster_distance = {}", s.cluster_distance)?;
        writeln!(f, "min_segment_points = {}", s.min_segment_points)?;
        writeln!(f, "max_segment_points = {}", s.max_segment_points)?;
        writeln!(f, "ground_removal = {}", s.ground_removal)?;
        writeln!(f, "ground_height = {}", s.ground_height)?;
        writeln!(f, "ground_column_size = {}", s.ground_column_size)?;
        writeln!(f, "normal_radius = {}", g.normal_radius)?;
        writeln!(f, "smoothness_deg = {}", g.smoothness_threshold.to_degrees())?;
        writeln!(f, "curvature_threshold = {}", g.curvature_threshold)?;
        writeln!(f, "esf_samples = {}", self.descriptor.sample_count)?;
        writeln!(f, "descriptor_seed = {}", self.descriptor.seed)?;
        writeln!(f, "knn = {}", self.knn)?;
        writeln!(f, "classifier = {}", self.classifier)?;
        writeln!(f, "l2_threshold = {}", self.l2_threshold)?;
        writeln!(f, "forest_threshold = {}", self.forest_threshold)?;
        writeln!(f, "forest_trees = {}", self.forest.n_trees)?;
        writeln!(f, "forest_max_depth = {}", self.forest.max_depth)?;
        writeln!(f, "forest_min_leaf = {}", self.forest.min_leaf)?;
        writeln!(f, "forest_seed = {}", self.forest.seed)?;
        writeln!(f, "min_cluster_size = {}", self.verify.min_cluster_size)?;
        writeln!(f, "ransac_resolution = {}", self.verify.resolution)?;
        writeln!(f, "ransac_iterations = {}", self.verify.max_iterations)?;
        writeln!(f, "ransac_seed = {}", self.verify.seed)?;
        writeln!(f, "scan_spacing = {}", self.scan_spacing)?;
        writeln!(f, "mode = {}", self.mode)?;
        writeln!(f, "duplicate_distance = {}", self.duplicate_distance)?;
        writeln!(f, "exclusion_distance = {}", self.exclusion_distance)?;
        writeln!(f, "correspondence_gate = {}", self.correspondence_gate)?;
        writeln!(f, "negative_ratio = {}", self.negative_ratio)?;
        writeln!(f, "training_seed = {}", self.training_seed)?;
        writeln!(f, "detection_translation_gate = {}", self.detection_translation_gate)?;
        writeln!(f, "detection_rotation_gate_deg = {}", self.detection_rotation_gate_deg)?;
        writeln!(f, "accumulate_scans = {}", self.accumulate_scans)
    }
}
