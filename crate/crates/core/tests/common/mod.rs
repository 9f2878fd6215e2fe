//! Synthetic-world fixtures shared by the integration tests.
#![allow(dead_code)]

use segmatch::cloud::transform_cloud;
use segmatch::config::ClassifierKind;
use segmatch::forest::{train, ForestParams};
use segmatch::pipeline::{balance_pairs, collect_training_pairs};
use segmatch::segmentation::GroundRemoval;
use segmatch::synthetic::{ObserveParams, World, WorldParams};
use segmatch::{ForestModel, PipelineConfig, PointCloud, Pose, Result};

/// Desk-scale configuration for the revisit world: a 25 m neighbourhood,
/// every voxel kept, flat ground at z = 0 and a reduced shape-function budget.
pub fn revisit_config() -> PipelineConfig {
    let mut c = PipelineConfig::default();
    c.neighborhood_radius = 25.0;
    c.voxel_min_points = 1;
    c.segmentation.ground_removal = GroundRemoval::MinHeight;
    c.segmentation.ground_height = 0.2;
    c.descriptor.sample_count = 2000;
    c
}

pub fn revisit_observation(seed: u64) -> ObserveParams {
    ObserveParams {
        range: 25.0,
        density: 400.0,
        ground_points: 5000,
        noise: 0.02,
        seed,
    }
}

pub fn world(seed: u64) -> World {
    World::generate(&WorldParams { seed, ..WorldParams::default() }).expect("world")
}

/// Sensor-frame scans along the world's road, generated lazily.
pub fn sensor_scans<'a>(
    world: &'a World,
    obs: ObserveParams,
    poses: Vec<Pose>,
) -> impl Iterator<Item = Result<(usize, PointCloud, Pose)>> + 'a {
    poses.into_iter().enumerate().map(move |(i, pose)| {
        let global = world.observe(&pose, &obs, i);
        Ok((i, transform_cloud(&global, &pose.inverse()), pose))
    })
}

/// Forest trained on pairs harvested from the given training worlds.
pub fn train_forest(config: &PipelineConfig, seeds: &[u64]) -> ForestModel {
    let mut pairs = Vec::new();
    let mut c = config.clone();
    c.classifier = ClassifierKind::L2;
    for &s in seeds {
        let w = world(s);
        let poses = w.poses(c.scan_spacing);
        pairs.extend(collect_training_pairs(sensor_scans(&w, revisit_observation(s), poses), &c).expect("pairs"));
    }
    let set = balance_pairs(&pairs, c.negative_ratio, c.training_seed).expect("balanced set");
    train(&set, &ForestParams { seed: 7, ..ForestParams::default() }).expect("forest")
}
