//! Segment-based place recognition and loop-closure detection for 3D point
//! clouds.
//!
//! The pipeline extracts a cylindrical neighbourhood around the robot,
//! voxel-filters it, removes the ground and clusters the remainder into
//! segments. Each segment is described by eigenvalue shape measures and an
//! ensemble of shape-function histograms; candidate matches are retrieved by
//! k-NN in eigen-feature space, scored by a random forest and finally
//! verified geometrically with RANSAC over segment centroids.

pub mod cloud;
pub mod config;
pub mod descriptors;
pub mod error;
pub mod eval;
pub mod forest;
pub mod geomverify;
pub mod io;
pub mod matching;
mod pca;
pub mod pipeline;
pub mod segmentation;
pub mod spatial;
pub mod synthetic;
pub mod targetmap;
mod wire;

pub use nalgebra;
pub use cloud::{Point3, PointCloud, Pose, Trajectory};
pub use config::PipelineConfig;
pub use descriptors::{DescriptorParams, FeatureVector};
pub use error::{Error, Result};
pub use forest::{ForestModel, PairFeature, TrainingSet};
pub use geomverify::{LoopClosure, VerifyParams};
pub use matching::{CandidateMatch, ClassifierMode, FeatureIndex};
pub use pipeline::{Mode, Pipeline};
pub use segmentation::{Segment, SegmentationParams};
pub use targetmap::TargetMap;
