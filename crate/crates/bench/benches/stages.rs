use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use segmatch::cloud::{extract_cylindrical_neighborhood, voxel_grid_filter};
use segmatch::descriptors::{describe, DescriptorParams};
use segmatch::geomverify::ransac_verify;
use segmatch::segmentation::{euclidean_segmenter, remove_ground, GroundRemoval, SegmentationParams};
use segmatch::{FeatureIndex, VerifyParams};
use segmatch_bench::{candidates, eigen_segments, forest, scan};

fn segmentation_params() -> SegmentationParams {
    SegmentationParams { ground_removal: GroundRemoval::MinHeight, ground_height: 0.2, ..SegmentationParams::default() }
}

fn cloud_stages(c: &mut Criterion) {
    let (cloud, pose) = scan(60.0, 350.0, 40_000);
    let local = extract_cylindrical_neighborhood(&cloud, &pose.position(), 60.0).unwrap();
    let params = segmentation_params();
    c.bench_function("voxel_filter_100k", |b| b.iter(|| voxel_grid_filter(black_box(&local), 0.1, 2).unwrap()));

    let filtered = voxel_grid_filter(&local, 0.1, 2).unwrap();
    let above = remove_ground(&filtered, &params).unwrap();
    c.bench_function("euclidean_segmentation", |b| b.iter(|| euclidean_segmenter(black_box(&above), &params).unwrap()));

    let segments = euclidean_segmenter(&above, &params).unwrap();
    let largest = segments.iter().max_by_key(|s| s.len()).unwrap().clone();
    let mut group = c.benchmark_group("describe");
    for samples in [2_000, 20_000] {
        let p = DescriptorParams { sample_count: samples, seed: 0 };
        group.bench_function(format!("esf_{samples}"), |b| b.iter(|| describe(black_box(&largest), &p).unwrap()));
    }
    group.finish();
}

fn matching_stages(c: &mut Criterion) {
    let targets = eigen_segments(20_000, 1);
    let queries = eigen_segments(50, 2);
    c.bench_function("index_build_20k", |b| b.iter(|| FeatureIndex::build(black_box(&targets)).unwrap()));
    let index = FeatureIndex::build(&targets).unwrap();
    c.bench_function("knn_200_x50", |b| {
        b.iter(|| queries.iter().map(|q| index.retrieve(q, 200).unwrap().len()).sum::<usize>())
    });

    let (model, pairs) = forest(5_000);
    c.bench_function("forest_score_10k", |b| {
        b.iter(|| pairs.iter().cycle().take(10_000).map(|p| model.score(p)).sum::<f64>())
    });
}

fn verification(c: &mut Criterion) {
    let params = VerifyParams::default();
    c.bench_function("ransac_20_in_60_out", |b| {
        b.iter_batched(|| candidates(20, 60, 5), |m| ransac_verify(&m, &params, 0).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, cloud_stages, matching_stages, verification);
criterion_main!(benches);
