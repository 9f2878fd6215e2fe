//! `segmatch`: segment-based place recognition from the command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use segmatch::cloud::voxel_grid_filter;
use segmatch::config::{ClassifierKind, SegmenterKind};
use segmatch::descriptors::describe_all;
use segmatch::eval::{
    distance_grid, localization_probability, parse_records_csv, parse_scores_csv, probability_csv,
    records_csv, roc_csv, roc_curve, scores_csv, stretches_from_records, timing_csv, timing_report,
};
use segmatch::forest::{load_model, save_model, train};
use segmatch::io::{load_sequence, parse_pose_row, read_cloud, SequenceDataset};
use segmatch::pipeline::{balance_pairs, collect_training_pairs, run_sequence, SequenceRun};
use segmatch::segmentation::{euclidean_segmenter, region_growing_segmenter, remove_ground};
use segmatch::synthetic::{write_dataset, ObserveParams, World, WorldParams};
use segmatch::{ForestModel, Mode, Pipeline, PipelineConfig, Pose, TargetMap};

#[derive(Parser)]
#[command(name = "segmatch", version, about = "Segment-based place recognition and loop closure for lidar sequences")]
struct Cli {
    /// Key-value configuration file; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Harvest labelled segment pairs from sequences and train a forest.
    Train(TrainArgs),
    /// Localize a sequence against a map stored on disk.
    Localize(LocalizeArgs),
    /// Detect loop closures online while building the map.
    CloseLoops(CloseLoopsArgs),
    /// Segment a single cloud and list the segments.
    Segment(SegmentArgs),
    /// Turn run records or classifier scores into metric tables.
    Eval(EvalArgs),
    /// Write a labelled synthetic sequence.
    MakeSynthetic(SyntheticArgs),
}

/// A sequence directory holds `scans/` (one cloud per file, name order) and
/// `poses.txt`.
#[derive(Args)]
struct SequenceArgs {
    #[arg(long)]
    sequence: PathBuf,
}

impl SequenceArgs {
    fn load(&self) -> Result<SequenceDataset> {
        open_sequence(&self.sequence)
    }
}

fn open_sequence(dir: &Path) -> Result<SequenceDataset> {
    load_sequence(&dir.join("scans"), &dir.join("poses.txt"))
        .with_context(|| format!("loading sequence {}", dir.display()))
}

#[derive(Args)]
struct TrainArgs {
    /// Training sequence (repeatable).
    #[arg(long = "sequence", required = true)]
    sequences: Vec<PathBuf>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Held-out sequence whose labelled pairs are scored by the new model (repeatable).
    #[arg(long = "validation")]
    validation: Vec<PathBuf>,
    /// Where to write `score,label` rows for the held-out pairs.
    #[arg(long, requires = "validation")]
    scores: Option<PathBuf>,
}

#[derive(Args)]
struct RunOutput {
    /// Forest model; required when the classifier is `forest`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for `closures.csv`, `records.csv` and `timing.csv`.
    #[arg(long)]
    out_dir: PathBuf,
    /// Correction a correct closure should report, as 12 row-major reals.
    #[arg(long)]
    expected: Option<String>,
}

#[derive(Args)]
struct LocalizeArgs {
    #[command(flatten)]
    seq: SequenceArgs,
    /// Map file to localize against.
    #[arg(long)]
    map: PathBuf,
    #[command(flatten)]
    out: RunOutput,
}

#[derive(Args)]
struct CloseLoopsArgs {
    #[command(flatten)]
    seq: SequenceArgs,
    #[command(flatten)]
    out: RunOutput,
    /// Where to save the map built during the run.
    #[arg(long)]
    map_out: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    /// Cloud file (binary or ASCII).
    #[arg(long)]
    cloud: PathBuf,
    /// Skip ground removal.
    #[arg(long)]
    keep_ground: bool,
    /// Compute eigenvalue features and append them to each row.
    #[arg(long)]
    describe: bool,
    /// Write the segment table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Records written by `localize` or `close-loops`.
    #[arg(long, required_unless_present = "scores")]
    records: Option<PathBuf>,
    /// `score,label` rows for the ROC curve.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Distances at which to report P(x); defaults to a 1 m grid.
    #[arg(long, value_delimiter = ',')]
    at: Vec<f64>,
    /// Upper end of the default grid (m).
    #[arg(long, default_value_t = 100.0)]
    max_distance: f64,
    /// Write `probability.csv`, `timing.csv` and `roc.csv` here instead of stdout.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 40)]
    objects: usize,
    /// Distance between consecutive scans along the road (m).
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    /// Sensor range (m).
    #[arg(long, default_value_t = 60.0)]
    range: f64,
    /// Object surface points per square metre at 10 m.
    #[arg(long, default_value_t = 1000.0)]
    density: f64,
    #[arg(long, default_value_t = 40_000)]
    ground_points: usize,
    /// Range noise standard deviation (m).
    #[arg(long, default_value_t = 0.02)]
    noise: f64,
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::from_file(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_optional_model(config: &PipelineConfig, path: Option<&Path>) -> Result<Option<ForestModel>> {
    match (config.classifier, path) {
        (ClassifierKind::Forest, None) => bail!("classifier is `forest` but no --model was given"),
        (_, Some(p)) => Ok(Some(load_model(p).with_context(|| format!("loading model {}", p.display()))?)),
        (ClassifierKind::L2, None) => Ok(None),
    }
}

fn cmd_train(config: &PipelineConfig, args: &TrainArgs) -> Result<()> {
    let mut pairs = Vec::new();
    for dir in &args.sequences {
        let seq = open_sequence(dir)?;
        let found = collect_training_pairs(seq.frames(), config)?;
        eprintln!(
            "{}: {} candidate pairs, {} matches",
            dir.display(),
            found.len(),
            found.iter().filter(|p| p.is_match).count()
        );
        pairs.extend(found);
    }
    let set = balance_pairs(&pairs, config.negative_ratio, config.training_seed)?;
    let model = train(&set, &config.forest)?;
    save_model(&model, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "trained {} trees on {} pairs ({} matches)",
        model.n_trees(),
        set.len(),
        set.positives()
    );
    println!("feature importances:");
    for (i, w) in model.feature_importances().iter().enumerate() {
        println!("  {i:2} {w:.4}");
    }

    if !args.validation.is_empty() {
        let mut scored = Vec::new();
        for dir in &args.validation {
            let seq = open_sequence(dir)?;
            for p in collect_training_pairs(seq.frames(), config)? {
                scored.push((model.score(&p.feature), p.is_match));
            }
        }
        let curve = roc_curve(&scored)?;
        println!("held-out AUC {:.4} over {} pairs", curve.auc, scored.len());
        if let Some(path) = &args.scores {
            fs::write(path, scores_csv(&scored)).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    Ok(())
}

fn parse_expected(text: Option<&str>) -> Result<Pose> {
    match text {
        None => Ok(Pose::identity()),
        Some(t) => parse_pose_row(t).map_err(|e| anyhow::anyhow!("--expected: {e}")),
    }
}

fn closures_csv(run: &SequenceRun) -> String {
    let mut out = String::from("scan_index,consensus_size,max_residual,outcome,r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz\n");
    for (lc, outcome) in &run.closures {
        let _ = write!(out, "{},{},{},{}", lc.source_scan_index, lc.consensus_size, lc.max_residual(), outcome);
        for v in lc.transform.to_row_major() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn write_run(dir: &Path, run: &SequenceRun) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("closures.csv"), closures_csv(run))?;
    fs::write(dir.join("records.csv"), records_csv(&run.records))?;
    if run.records.len() >= 2 {
        fs::write(dir.join("timing.csv"), timing_csv(&timing_report(&run.records)?))?;
    }
    println!(
        "{} scans, {} closures ({} true, {} false)",
        run.records.len(),
        run.closures.len(),
        run.true_positives(),
        run.false_positives()
    );
    Ok(())
}

fn cmd_localize(mut config: PipelineConfig, args: &LocalizeArgs) -> Result<()> {
    config.mode = Mode::Localization;
    let map = TargetMap::load(&args.map).with_context(|| format!("loading map {}", args.map.display()))?;
    let model = load_optional_model(&config, args.out.model.as_deref())?;
    let expected = parse_expected(args.out.expected.as_deref())?;
    let seq = args.seq.load()?;
    let mut pipeline = Pipeline::with_map(config, map, model)?;
    let run = run_sequence(&mut pipeline, seq.frames(), &expected)?;
    write_run(&args.out.out_dir, &run)
}

fn cmd_close_loops(mut config: PipelineConfig, args: &CloseLoopsArgs) -> Result<()> {
    config.mode = Mode::LoopClosure;
    let model = load_optional_model(&config, args.out.model.as_deref())?;
    let expected = parse_expected(args.out.expected.as_deref())?;
    let seq = args.seq.load()?;
    let mut pipeline = Pipeline::new(config, model)?;
    let run = run_sequence(&mut pipeline, seq.frames(), &expected)?;
    write_run(&args.out.out_dir, &run)?;
    if let Some(path) = &args.map_out {
        let map = pipeline.into_map();
        map.save(path).with_context(|| format!("writing map {}", path.display()))?;
        println!("map: {} segments", map.len());
    }
    Ok(())
}

fn cmd_segment(config: &PipelineConfig, args: &SegmentArgs) -> Result<()> {
    let cloud = read_cloud(&args.cloud).with_context(|| format!("reading {}", args.cloud.display()))?;
    let filtered = voxel_grid_filter(&cloud, config.voxel_leaf, config.voxel_min_points)?;
    let above = if args.keep_ground { filtered } else { remove_ground(&filtered, &config.segmentation)? };
    let mut segments = match config.segmenter {
        SegmenterKind::Euclidean => euclidean_segmenter(&above, &config.segmentation)?,
        SegmenterKind::RegionGrowing => region_growing_segmenter(&above, &config.region_growing, &config.segmentation)?,
    };
    if args.describe {
        segments = describe_all(&segments, &config.descriptor)?;
    }
    let mut table = String::from("id,points,cx,cy,cz");
    if args.describe {
        table.push_str(",linearity,planarity,scattering,omnivariance,anisotropy,eigenentropy,change_of_curvature");
    }
    table.push('\n');
    for s in &segments {
        let c = s.centroid;
        let _ = write!(table, "{},{},{},{},{}", s.id, s.len(), c.x, c.y, c.z);
        if let Some(f) = &s.feature {
            for v in f.eigen {
                let _ = write!(table, ",{v}");
            }
        }
        table.push('\n');
    }
    match &args.out {
        Some(path) => fs::write(path, table).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{table}"),
    }
    eprintln!("{} points, {} after filtering, {} segments", cloud.len(), above.len(), segments.len());
    Ok(())
}

fn emit(dir: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            fs::write(d.join(name), text).with_context(|| format!("writing {name}"))?;
        }
        None => {
            println!("# {name}");
            print!("{text}");
        }
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let dir = args.out_dir.as_deref();
    if let Some(path) = &args.records {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let records = parse_records_csv(&text, &path.to_string_lossy())?;
        let (stretches, total) = stretches_from_records(&records);
        let xs = if args.at.is_empty() { distance_grid(args.max_distance, 1.0) } else { args.at.clone() };
        emit(dir, "probability.csv", &probability_csv(&localization_probability(&stretches, total, &xs)?))?;
        if records.len() >= 2 {
            emit(dir, "timing.csv", &timing_csv(&timing_report(&records)?))?;
        }
    }
    if let Some(path) = &args.scores {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let curve = roc_curve(&parse_scores_csv(&text, &path.to_string_lossy())?)?;
        eprintln!("AUC {:.4}", curve.auc);
        emit(dir, "roc.csv", &roc_csv(&curve))?;
    }
    Ok(())
}

fn cmd_make_synthetic(args: &SyntheticArgs) -> Result<()> {
    let world = World::generate(&WorldParams { n_objects: args.objects, seed: args.seed, ..WorldParams::default() })?;
    let poses = world.poses(args.spacing);
    let obs = ObserveParams {
        range: args.range,
        density: args.density,
        ground_points: args.ground_points,
        noise: args.noise,
        seed: args.seed,
    };
    write_dataset(&world, &poses, &obs, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("{} scans, {} objects, {:.0} m path", poses.len(), world.objects.len(), world.path_length());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Train(a) => cmd_train(&config, a),
        Command::Localize(a) => cmd_localize(config, a),
        Command::CloseLoops(a) => cmd_close_loops(config, a),
        Command::Segment(a) => cmd_segment(&config, a),
        Command::Eval(a) => cmd_eval(a),
        Command::MakeSynthetic(a) => cmd_make_synthetic(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
