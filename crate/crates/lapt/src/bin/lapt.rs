//! Command-line front end: simulate a sample, project clouds to depth,
//! run the full pipeline, evaluate predictions, benchmark throughput.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 I/O error.
//! `LAPT_WORKERS` caps the worker-thread count; outputs are bit-identical
//! regardless of its value.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lapt::bev::{FusionMethod, GridSpec};
use lapt::depth::rasterize_depth;
use lapt::error::{Error, Result};
use lapt::eval::iou;
use lapt::geometry::{lidar_to_camera, project_to_pixels};
use lapt::io::{self, Annotations, Sample};
use lapt::pipeline::{run_pipeline, FeatureProvider, PipelineConfig};
use lapt::sim;

#[derive(Parser)]
#[command(name = "lapt", version, about = "LiDAR-aided perspective transform pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic sample directory from a seed.
    Simulate(SimulateArgs),
    /// Project the sample's point cloud into per-camera depth images.
    Project(ProjectArgs),
    /// Run the full camera(+LiDAR) to BEV pipeline on a sample.
    Pipeline(PipelineArgs),
    /// Compare predicted per-class grids against ground truth.
    Eval(EvalArgs),
    /// Measure pipeline latency and throughput on a sample.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Output sample directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of cuboid objects to place.
    #[arg(long, default_value_t = 6)]
    objects: usize,
    /// LiDAR scan pattern: shallow (near-horizontal rings) or dense.
    #[arg(long, default_value = "shallow")]
    lidar: String,
    /// Skip the oracle semantic images.
    #[arg(long)]
    no_semantics: bool,
    /// Skip rasterizing ground-truth BEV grids.
    #[arg(long)]
    no_gt: bool,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct ProjectArgs {
    /// Input sample directory.
    sample: PathBuf,
    /// Output directory for cam_NN.dep depth files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// Input sample directory.
    sample: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated pyramid downsample factors.
    #[arg(long, default_value = "8,16")]
    scales: String,
    /// Feature source: rgb or semantic (oracle mode).
    #[arg(long, default_value = "semantic")]
    provider: String,
    /// Number of semantic classes (ids 1..=C).
    #[arg(long, default_value_t = 2)]
    num_classes: usize,
    /// Binarization threshold for semantic predictions.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Splat into a half-cell-count grid, then bilinearly upsample x2.
    #[arg(long)]
    ms_b: bool,
    /// Build the LiDAR occupancy BEV branch.
    #[arg(long)]
    lidar_bev: bool,
    /// Camera/LiDAR fusion method (implies --lidar-bev): sum|concat|maxpool.
    #[arg(long)]
    fusion: Option<String>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory with predicted class_NN.grd files.
    #[arg(long)]
    pred: PathBuf,
    /// Directory with ground-truth class_NN.grd files.
    #[arg(long)]
    gt: PathBuf,
    /// Binarization threshold applied to prediction grids.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Input sample directory.
    sample: PathBuf,
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Comma-separated pyramid downsample factors.
    #[arg(long, default_value = "8,16")]
    scales: String,
    /// Feature source: rgb or semantic.
    #[arg(long, default_value = "semantic")]
    provider: String,
    #[command(flatten)]
    grid: GridArgs,
}

/// BEV grid geometry, shared by several commands.
#[derive(Args)]
struct GridArgs {
    /// Grid extent along vehicle x, meters.
    #[arg(long, default_value_t = 100.0)]
    x_extent: f64,
    /// Grid extent along vehicle y, meters.
    #[arg(long, default_value_t = 100.0)]
    y_extent: f64,
    /// Cell size, meters.
    #[arg(long, default_value_t = 0.5)]
    resolution: f64,
    /// Lower bound of the vertical slab, meters.
    #[arg(long, default_value_t = -2.0)]
    z_min: f64,
    /// Upper bound of the vertical slab, meters.
    #[arg(long, default_value_t = 4.0)]
    z_max: f64,
}

impl GridArgs {
    fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.x_extent, self.y_extent, self.resolution, self.z_min, self.z_max)
    }
}

fn parse_scales(s: &str) -> Result<Vec<u32>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| Error::InvalidArgument(format!("bad scale '{t}'")))
        })
        .collect()
}

fn init_workers() {
    if let Ok(v) = std::env::var("LAPT_WORKERS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                // Ignore failure: the global pool may already be built.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_workers();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Project(args) => cmd_project(&args),
        Command::Pipeline(args) => cmd_pipeline(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Bench(args) => cmd_bench(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let pattern = match args.lidar.as_str() {
        "shallow" => sim::LidarPattern::shallow(),
        "dense" => sim::LidarPattern::dense(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown lidar pattern '{other}' (expected shallow|dense)"
            )))
        }
    };
    let mut params = sim::SceneParams::default();
    params.classes[0].count = args.objects;
    let scene = sim::generate_scene(args.seed, &params);
    let rig = sim::surround_rig();
    let views = sim::render_views(&scene, &rig)?;
    let cloud = sim::sample_lidar(&scene, &pattern, &rig.lidar)?;
    let sample = Sample {
        cloud,
        images: views.iter().map(|v| v.image.clone()).collect(),
        semantics: if args.no_semantics {
            None
        } else {
            Some(views.iter().map(|v| v.semantic.clone()).collect())
        },
        annotations: Some(Annotations {
            cuboids: scene.objects.clone(),
            polygons: scene.ground.clone(),
        }),
        rig,
    };
    io::write_sample(&args.out, &sample)?;
    if !args.no_gt {
        let spec = args.grid.spec()?;
        let classes = scene.class_ids();
        let truth = sim::analytic_bev(&scene, &spec, &classes)?;
        let gt_dir = args.out.join("gt");
        std::fs::create_dir_all(&gt_dir)?;
        for (channel, &class_id) in truth.channels.iter().zip(&classes) {
            io::write_binary_channel(&gt_dir.join(io::gt_channel_name(class_id)), channel, &spec)?;
        }
    }
    println!(
        "simulate seed={} objects={} points={} -> {}",
        args.seed,
        scene.objects.len(),
        sample.cloud.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_project(args: &ProjectArgs) -> Result<()> {
    let sample = io::read_sample(&args.sample)?;
    std::fs::create_dir_all(&args.out)?;
    for (i, cam) in sample.rig.cameras.iter().enumerate() {
        let in_cam = lidar_to_camera(&sample.cloud, &sample.rig.lidar, &cam.extrinsics);
        let projections = project_to_pixels(&in_cam, &cam.intrinsics);
        let depth = rasterize_depth(&projections, cam.intrinsics.width, cam.intrinsics.height)?;
        io::write_depth(&args.out.join(format!("cam_{i:02}.dep")), &depth)?;
        println!(
            "project cam_{i:02}: {} of {} pixels have depth",
            depth.occupancy_count(),
            cam.intrinsics.width * cam.intrinsics.height
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn pipeline_config(
    scales: &str,
    provider: &str,
    num_classes: usize,
    threshold: f64,
    ms_b: bool,
    lidar_bev: bool,
    fusion: Option<&str>,
    grid: &GridArgs,
) -> Result<PipelineConfig> {
    let fusion_method = match fusion {
        Some(f) => Some(f.parse::<FusionMethod>()?),
        None if lidar_bev => Some(FusionMethod::Concat),
        None => None,
    };
    Ok(PipelineConfig {
        scales: parse_scales(scales)?,
        provider: provider.parse::<FeatureProvider>()?,
        num_classes,
        coarse: ms_b,
        lidar_fusion: fusion_method,
        threshold,
        spec: grid.spec()?,
    })
}

fn cmd_pipeline(args: &PipelineArgs) -> Result<()> {
    let sample = io::read_sample(&args.sample)?;
    let cfg = pipeline_config(
        &args.scales,
        &args.provider,
        args.num_classes,
        args.threshold,
        args.ms_b,
        args.lidar_bev,
        args.fusion.as_deref(),
        &args.grid,
    )?;
    let out = run_pipeline(&sample, &cfg)?;
    std::fs::create_dir_all(&args.out)?;
    io::write_grid(&args.out.join("camera_bev.grd"), &out.camera_bev)?;
    if let Some(lidar) = &out.lidar_bev {
        io::write_grid(&args.out.join("lidar_bev.grd"), lidar)?;
    }
    if let Some(fused) = &out.fused {
        io::write_grid(&args.out.join("fused.grd"), fused)?;
    }
    if let Some(preds) = &out.predictions {
        let pred_dir = args.out.join("pred");
        std::fs::create_dir_all(&pred_dir)?;
        for (j, channel) in preds.channels.iter().enumerate() {
            let class_id = (j + 1) as u8;
            io::write_binary_channel(
                &pred_dir.join(io::gt_channel_name(class_id)),
                channel,
                &cfg.spec,
            )?;
        }
    }
    for (name, ms) in out.timings.stages() {
        println!("stage {name}: {ms:.3} ms");
    }
    println!("total: {:.3} ms", out.timings.total_ms);
    println!("nonzero cells: {}", out.camera_bev.nonzero_cells());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let preds = io::list_class_grids(&args.pred)?;
    if preds.is_empty() {
        return Err(Error::Validation(format!(
            "no class_NN.grd files in {}",
            args.pred.display()
        )));
    }
    println!("{:<8} {:>8}", "class", "iou");
    for (class_id, pred_path) in &preds {
        let gt_path = args.gt.join(io::gt_channel_name(*class_id));
        if !gt_path.exists() {
            return Err(Error::Validation(format!(
                "missing ground truth for class {class_id}: {}",
                gt_path.display()
            )));
        }
        let (pred, pred_spec) = read_thresholded(pred_path, args.threshold)?;
        let (gt, gt_spec) = read_thresholded(&gt_path, args.threshold)?;
        if pred_spec != gt_spec {
            return Err(Error::Validation(format!(
                "class {class_id}: prediction and ground-truth grid geometry differ"
            )));
        }
        let score = iou(&pred, &gt)?;
        println!("{:<8} {:>8.4}", class_id, score);
        println!("{}", serde_json::json!({"class": class_id, "iou": score}));
    }
    Ok(())
}

fn read_thresholded(
    path: &Path,
    threshold: f64,
) -> Result<(lapt::eval::BinaryChannel, GridSpec)> {
    let grid = io::read_grid(path)?;
    if grid.channels() != 1 {
        return Err(Error::Validation(format!(
            "{}: expected a 1-channel grid",
            path.display()
        )));
    }
    Ok((lapt::eval::binarize(&grid, 0, threshold), *grid.spec()))
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    if args.iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be positive".into()));
    }
    let sample = io::read_sample(&args.sample)?;
    let cfg = pipeline_config(
        &args.scales,
        &args.provider,
        2,
        0.5,
        false,
        false,
        None,
        &args.grid,
    )?;
    for _ in 0..args.warmup {
        run_pipeline(&sample, &cfg)?;
    }
    let mut runs = Vec::with_capacity(args.iterations);
    for _ in 0..args.iterations {
        runs.push(run_pipeline(&sample, &cfg)?.timings);
    }
    let percentile = |mut values: Vec<f64>, p: f64| -> f64 {
        values.sort_by(|a, b| a.total_cmp(b));
        let idx = ((values.len() - 1) as f64 * p).round() as usize;
        values[idx]
    };
    for name in ["depth", "features", "splat", "fuse", "total"] {
        let values: Vec<f64> = runs
            .iter()
            .map(|t| match name {
                "depth" => t.depth_ms,
                "features" => t.features_ms,
                "splat" => t.splat_ms,
                "fuse" => t.fuse_ms,
                _ => t.total_ms,
            })
            .collect();
        println!(
            "stage {name}: p50 {:.3} ms, p95 {:.3} ms",
            percentile(values.clone(), 0.5),
            percentile(values, 0.95)
        );
    }
    let mean_ms: f64 = runs.iter().map(|t| t.total_ms).sum::<f64>() / runs.len() as f64;
    println!("iterations: {}", runs.len());
    println!("fps: {:.2}", 1000.0 / mean_ms);
    Ok(())
}
