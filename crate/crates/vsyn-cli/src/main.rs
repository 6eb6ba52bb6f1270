//! `vsyn`: the pipeline as a set of deterministic subcommands.
//!
//! Every invocation reads files, computes, writes files, and prints exactly
//! one JSON summary to stdout. Errors go to stderr with a machine-parsable
//! `ERROR(<kind>):` prefix and map onto stable exit codes: 0 success,
//! 1 usage, 2 input or format problem, 3 numerical failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vsyn_core::aggregation::{
    forward_warp, parse_camera_file, serialize_camera_file, AggregationError, FeatureMap,
};
use vsyn_core::averaging::{
    gauge_align, pose_error_stats, robust_average, AveragingConfig, AveragingError,
};
use vsyn_core::fusion::{
    align_scale, depth_error_stats, fuse, read_confidence_map, read_depth_map,
    write_confidence_map, write_depth_map, write_provenance_mask, ConfidenceMap, DepthMap,
    FusionConfig, FusionError, PixelClass,
};
use vsyn_core::harness::{
    generate_cameras, generate_depth_pair, generate_pose_graph, parse_config, run_fig4_experiment,
    run_fig6_experiment, run_sigma_sweep, sweep_csv, fig4_csv, fig6_csv, HarnessConfig,
    HarnessError, SIGMA_SWEEP,
};
use vsyn_core::mpnn::{refine, write_params, MpnnError, TrainConfig};
use vsyn_core::viewgraph::{
    cycle_consistency_filter, init_absolute_rotations, min_spanning_tree, parse_pose_graph,
    serialize_pose_graph, GraphError, ViewGraph,
};

#[derive(Parser)]
#[command(
    name = "vsyn",
    version,
    about = "Rotation averaging, learned pose refinement, and depth fusion on synthetic scenes"
)]
struct Cli {
    /// Base seed; overrides the configuration's seed when given (default 42)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Harness configuration file (flat `key = value` text) for the
    /// generator and experiment subcommands
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Prefix for every file this command writes
    #[arg(long, global = true, default_value = "vsyn-out")]
    out: String,

    /// Print the full report on stdout instead of the aggregate summary
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a noisy pose graph plus its ground truth
    GenGraph,
    /// Generate paired depth maps (truth, stereo, monocular) for camera 0
    GenDepth,
    /// Initialize absolute rotations by walking a spanning tree
    InitPoses {
        /// Pose graph file
        graph: PathBuf,
    },
    /// Flag edges that disagree with their triangle cycles
    FilterCycles {
        /// Pose graph file
        graph: PathBuf,
        /// Flagging threshold on the median cycle residual, in degrees
        #[arg(long, default_value_t = 10.0)]
        threshold_deg: f64,
    },
    /// Robustly average absolute rotations over the graph
    Average {
        /// Pose graph file with initial absolute rotations
        graph: PathBuf,
        /// Anchor strength toward the initial rotations
        #[arg(long, default_value_t = 0.1)]
        beta: f64,
        /// Iteration cap
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
    },
    /// Train the message-passing refiner and apply it when it helps
    RefineMpnn {
        /// Pose graph file with absolute rotations
        graph: PathBuf,
        /// Hidden state width
        #[arg(long, default_value_t = 8)]
        hidden: u32,
        /// Message passing rounds
        #[arg(long, default_value_t = 2)]
        steps: u32,
        /// Training iterations
        #[arg(long, default_value_t = 500)]
        iters: usize,
        /// Adam learning rate
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
    },
    /// Fit the scale and shift mapping monocular depth onto stereo depth
    AlignScale {
        /// Monocular depth map (DFMP)
        mono: PathBuf,
        /// Stereo depth map (DFMP)
        mvs: PathBuf,
        /// Stereo confidence map (DFMP)
        conf: PathBuf,
        /// Ignore stereo pixels with confidence below this floor
        #[arg(long, default_value_t = 0.0)]
        conf_floor: f64,
    },
    /// Fuse stereo and monocular depth into one map with a provenance mask
    FuseDepth {
        /// Stereo depth map (DFMP)
        mvs: PathBuf,
        /// Monocular depth map; aligned onto the stereo metric first (DFMP)
        mono: PathBuf,
        /// Monocular confidence map (DFMP)
        mono_conf: PathBuf,
        /// Stereo confidence map (DFMP); defaults to full confidence
        #[arg(long)]
        mvs_conf: Option<PathBuf>,
        /// Confidence threshold separating blend from stereo-only
        #[arg(long, default_value_t = 0.05)]
        tau: f64,
        /// Range factor on the median depth separating near from far
        #[arg(long, default_value_t = 0.66)]
        sigma: f64,
    },
    /// Warp a feature map from a source view into a destination view
    Warp {
        /// Source camera file
        src_cam: PathBuf,
        /// Destination camera file
        dst_cam: PathBuf,
        /// Source feature map (FMAP)
        features: PathBuf,
        /// Source depth map (DFMP)
        depth: PathBuf,
    },
    /// Angular error statistics between two pose graphs, gauge aligned
    EvalPose {
        /// Estimated pose graph file
        est: PathBuf,
        /// Reference pose graph file
        #[arg(value_name = "REF")]
        reference: PathBuf,
    },
    /// Depth error statistics between a prediction and the ground truth
    EvalDepth {
        /// Predicted depth map (DFMP)
        pred: PathBuf,
        /// Ground truth depth map (DFMP)
        truth: PathBuf,
    },
    /// Rotation-recovery study: init, filter, average, refine across seeds
    RunFig4,
    /// Depth-complementarity study: align, fuse, evaluate across seeds
    RunFig6,
    /// Depth study swept over a list of range factors, written as CSV
    SweepSigma {
        /// Comma-separated range factors
        #[arg(long, default_value = "0.25,0.5,0.66,1,1.5,2")]
        sigmas: String,
    },
}

// ---------------------------------------------------------------------------
// error handling and exit codes

struct CliError {
    kind: &'static str,
    code: u8,
    msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> CliError {
        CliError {
            kind: "usage",
            code: 1,
            msg: msg.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> CliError {
        CliError {
            kind: "io",
            code: 2,
            msg: format!("{}: {e}", path.display()),
        }
    }

    fn format(msg: impl Into<String>) -> CliError {
        CliError {
            kind: "format",
            code: 2,
            msg: msg.into(),
        }
    }

    fn numerical(msg: impl Into<String>) -> CliError {
        CliError {
            kind: "numerical",
            code: 3,
            msg: msg.into(),
        }
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> CliError {
        CliError::format(e.to_string())
    }
}

impl From<AveragingError> for CliError {
    fn from(e: AveragingError) -> CliError {
        match e {
            AveragingError::Graph(g) => g.into(),
            AveragingError::DegenerateGauge => CliError::numerical(e.to_string()),
        }
    }
}

impl From<MpnnError> for CliError {
    fn from(e: MpnnError) -> CliError {
        match e {
            MpnnError::Graph(g) => g.into(),
            MpnnError::Averaging(a) => a.into(),
            MpnnError::HiddenTooSmall { .. } => CliError::usage(e.to_string()),
            MpnnError::Divergence { .. } => CliError::numerical(e.to_string()),
            _ => CliError::format(e.to_string()),
        }
    }
}

impl From<AggregationError> for CliError {
    fn from(e: AggregationError) -> CliError {
        match e {
            AggregationError::BehindCamera { .. }
            | AggregationError::DegeneratePoint
            | AggregationError::DegenerateFrame
            | AggregationError::ZeroVariance => CliError::numerical(e.to_string()),
            _ => CliError::format(e.to_string()),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> CliError {
        match e {
            FusionError::InsufficientOverlap { .. }
            | FusionError::DegenerateFit
            | FusionError::EmptyValidSet => CliError::numerical(e.to_string()),
            _ => CliError::format(e.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> CliError {
        match e {
            HarnessError::Graph(g) => g.into(),
            HarnessError::Averaging(a) => a.into(),
            HarnessError::Mpnn(m) => m.into(),
            HarnessError::Fusion(f) => f.into(),
            HarnessError::Aggregation(a) => a.into(),
            _ => CliError::format(e.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// JSON summaries
//
// Summaries are flat objects emitted with shortest round-trip number
// formatting, so a zero prints as `0` and reruns are byte-identical.

enum Val {
    F(f64),
    U(u64),
    B(bool),
    S(String),
}

fn escape_json(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

fn summary(fields: &[(&str, Val)]) -> String {
    let mut body = String::new();
    for (k, v) in fields {
        if !body.is_empty() {
            body.push(',');
        }
        let _ = match v {
            Val::F(x) if x.is_finite() => write!(body, "\"{k}\":{x}"),
            Val::F(_) => write!(body, "\"{k}\":null"),
            Val::U(x) => write!(body, "\"{k}\":{x}"),
            Val::B(x) => write!(body, "\"{k}\":{x}"),
            Val::S(x) => write!(body, "\"{k}\":\"{}\"", escape_json(x)),
        };
    }
    format!("{{{body}}}")
}

/// Angles below a nanodegree are far under the metric's own resolution;
/// printing them as zero keeps identical-input comparisons exact.
fn snap(deg: f64) -> f64 {
    if deg.abs() < 1e-9 {
        0.0
    } else {
        deg
    }
}

// ---------------------------------------------------------------------------
// file plumbing

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &str, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(Path::new(path), e))
}

fn load_graph(path: &Path) -> Result<ViewGraph, CliError> {
    Ok(parse_pose_graph(&read_text(path)?)?)
}

fn load_depth(path: &Path) -> Result<DepthMap, CliError> {
    Ok(read_depth_map(&read_bytes(path)?)?)
}

fn load_conf(path: &Path) -> Result<ConfidenceMap, CliError> {
    Ok(read_confidence_map(&read_bytes(path)?)?)
}

fn load_config(cli: &Cli) -> Result<HarnessConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(&read_text(path)?)?,
        None => HarnessConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.preset.seed = seed;
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// subcommands

fn gen_graph(cli: &Cli) -> Result<String, CliError> {
    let cfg = load_config(cli)?;
    let cameras = generate_cameras(&cfg.preset)?;
    let (noisy, truth, labels) =
        generate_pose_graph(&cameras, &cfg.noise, cfg.density, cfg.preset.seed)?;
    let graph_path = format!("{}.graph.txt", cli.out);
    let truth_path = format!("{}.truth.txt", cli.out);
    write_file(&graph_path, serialize_pose_graph(&noisy).as_bytes())?;
    write_file(&truth_path, serialize_pose_graph(&truth).as_bytes())?;
    Ok(summary(&[
        ("vertices", Val::U(noisy.vertex_count() as u64)),
        ("edges", Val::U(noisy.edge_count() as u64)),
        (
            "outliers",
            Val::U(labels.iter().filter(|l| **l).count() as u64),
        ),
        ("graph", Val::S(graph_path)),
        ("truth", Val::S(truth_path)),
    ]))
}

fn gen_depth(cli: &Cli) -> Result<String, CliError> {
    let cfg = load_config(cli)?;
    let cameras = generate_cameras(&cfg.preset)?;
    let pair = generate_depth_pair(&cameras[0], &cfg.preset, &cfg.noise)?;
    let camera_path = format!("{}.camera.txt", cli.out);
    let truth_path = format!("{}.truth.dfmp", cli.out);
    let mvs_path = format!("{}.mvs.dfmp", cli.out);
    let mvs_conf_path = format!("{}.mvs-conf.dfmp", cli.out);
    let mono_path = format!("{}.mono.dfmp", cli.out);
    let mono_conf_path = format!("{}.mono-conf.dfmp", cli.out);
    write_file(
        &camera_path,
        serialize_camera_file(&cameras[..1]).as_bytes(),
    )?;
    write_file(&truth_path, &write_depth_map(&pair.truth))?;
    write_file(&mvs_path, &write_depth_map(&pair.mvs))?;
    write_file(&mvs_conf_path, &write_confidence_map(&pair.mvs_conf))?;
    write_file(&mono_path, &write_depth_map(&pair.mono))?;
    write_file(&mono_conf_path, &write_confidence_map(&pair.mono_conf))?;
    Ok(summary(&[
        ("width", Val::U(pair.truth.width() as u64)),
        ("height", Val::U(pair.truth.height() as u64)),
        ("valid_truth", Val::U(pair.truth.valid_count() as u64)),
        ("camera", Val::S(camera_path)),
        ("truth", Val::S(truth_path)),
        ("mvs", Val::S(mvs_path)),
        ("mvs_conf", Val::S(mvs_conf_path)),
        ("mono", Val::S(mono_path)),
        ("mono_conf", Val::S(mono_conf_path)),
    ]))
}

fn init_poses(cli: &Cli, graph: &Path) -> Result<String, CliError> {
    let g = load_graph(graph)?;
    let tree = min_spanning_tree(&g)?;
    let initialized = init_absolute_rotations(&g, &tree)?;
    let out_path = format!("{}.graph.txt", cli.out);
    write_file(&out_path, serialize_pose_graph(&initialized).as_bytes())?;
    Ok(summary(&[
        ("vertices", Val::U(initialized.vertex_count() as u64)),
        ("edges", Val::U(initialized.edge_count() as u64)),
        ("graph", Val::S(out_path)),
    ]))
}

fn filter_cycles(cli: &Cli, graph: &Path, threshold_deg: f64) -> Result<String, CliError> {
    if !(threshold_deg.is_finite() && threshold_deg > 0.0) {
        return Err(CliError::usage("--threshold-deg must be positive"));
    }
    let g = load_graph(graph)?;
    let filtered = cycle_consistency_filter(&g, threshold_deg.to_radians());
    let flagged = filtered.edges().iter().filter(|e| e.outlier).count();
    let out_path = format!("{}.graph.txt", cli.out);
    write_file(&out_path, serialize_pose_graph(&filtered).as_bytes())?;
    Ok(summary(&[
        ("edges", Val::U(filtered.edge_count() as u64)),
        ("flagged", Val::U(flagged as u64)),
        ("graph", Val::S(out_path)),
    ]))
}

fn average(cli: &Cli, graph: &Path, beta: f64, max_iters: usize) -> Result<String, CliError> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(CliError::usage("--beta must be nonnegative"));
    }
    if max_iters == 0 {
        return Err(CliError::usage("--max-iters must be at least 1"));
    }
    let g = load_graph(graph)?;
    let cfg = AveragingConfig {
        beta,
        max_iters,
        ..AveragingConfig::default()
    };
    let result = robust_average(&g, &cfg)?;
    let out_path = format!("{}.graph.txt", cli.out);
    let report_path = format!("{}.report.json", cli.out);
    write_file(&out_path, serialize_pose_graph(&result.graph).as_bytes())?;
    let line = summary(&[
        ("converged", Val::B(result.converged)),
        ("iterations", Val::U(result.iterations as u64)),
        ("objective", Val::F(result.objective)),
        ("graph", Val::S(out_path)),
        ("report", Val::S(report_path.clone())),
    ]);
    write_file(&report_path, line.as_bytes())?;
    Ok(line)
}

fn refine_mpnn(
    cli: &Cli,
    graph: &Path,
    hidden: u32,
    steps: u32,
    iters: usize,
    lr: f64,
) -> Result<String, CliError> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(CliError::usage("--lr must be positive"));
    }
    if steps == 0 || iters == 0 {
        return Err(CliError::usage("--steps and --iters must be at least 1"));
    }
    let g = load_graph(graph)?;
    let cfg = TrainConfig {
        hidden,
        rounds: steps,
        iters,
        learning_rate: lr,
        ..TrainConfig::default()
    };
    let seed = cli.seed.unwrap_or(42);
    let outcome = refine(&g, &cfg, seed)?;
    let out_path = format!("{}.graph.txt", cli.out);
    let params_path = format!("{}.params.bin", cli.out);
    let csv_path = format!("{}.loss.csv", cli.out);
    write_file(&out_path, serialize_pose_graph(&outcome.graph).as_bytes())?;
    write_file(&params_path, &write_params(&outcome.params))?;
    let mut csv = String::from("step,loss\n");
    for (step, loss) in outcome.trace.iter().enumerate() {
        let _ = writeln!(csv, "{step},{loss}");
    }
    write_file(&csv_path, csv.as_bytes())?;
    Ok(summary(&[
        ("applied", Val::B(outcome.applied)),
        ("objective_before", Val::F(outcome.objective_before)),
        ("objective_after", Val::F(outcome.objective_after)),
        (
            "loss_initial",
            Val::F(outcome.trace.first().copied().unwrap_or(0.0)),
        ),
        (
            "loss_final",
            Val::F(outcome.trace.last().copied().unwrap_or(0.0)),
        ),
        ("graph", Val::S(out_path)),
        ("params", Val::S(params_path)),
        ("loss_csv", Val::S(csv_path)),
    ]))
}

fn align_scale_cmd(
    mono: &Path,
    mvs: &Path,
    conf: &Path,
    conf_floor: f64,
) -> Result<String, CliError> {
    if !(conf_floor.is_finite() && (0.0..=1.0).contains(&conf_floor)) {
        return Err(CliError::usage("--conf-floor must lie in [0, 1]"));
    }
    let mono = load_depth(mono)?;
    let mvs = load_depth(mvs)?;
    let conf = load_conf(conf)?;
    let fit = align_scale(&mono, &mvs, &conf, conf_floor)?;
    Ok(summary(&[
        ("scale", Val::F(fit.scale)),
        ("shift", Val::F(fit.shift)),
        ("inliers", Val::U(fit.inliers as u64)),
        ("residual_rms", Val::F(fit.residual_rms)),
    ]))
}

fn fuse_depth(
    cli: &Cli,
    mvs: &Path,
    mono: &Path,
    mono_conf: &Path,
    mvs_conf: Option<&Path>,
    tau: f64,
    sigma: f64,
) -> Result<String, CliError> {
    let cfg = FusionConfig {
        tau,
        sigma,
        ..FusionConfig::default()
    };
    if cfg.validate().is_err() {
        return Err(CliError::usage(
            "--tau must lie in (0, 1) and --sigma must be positive",
        ));
    }
    let mvs = load_depth(mvs)?;
    let mono = load_depth(mono)?;
    let mono_conf = load_conf(mono_conf)?;
    let mvs_conf = mvs_conf.map(load_conf).transpose()?;
    // raw monocular depth is only defined up to an affine transform, so fit
    // it onto the stereo metric before classifying pixels
    let uniform;
    let align_conf = match &mvs_conf {
        Some(c) => c,
        None => {
            uniform = ConfidenceMap::uniform(mvs.width(), mvs.height(), 1.0)?;
            &uniform
        }
    };
    let fit = align_scale(&mono, &mvs, align_conf, 0.0)?;
    let mono = fit.apply(&mono);
    let (fused, mask) = fuse(&mvs, &mono, mvs_conf.as_ref(), Some(&mono_conf), &cfg)?;
    let fused_path = format!("{}.fused.dfmp", cli.out);
    let mask_path = format!("{}.mask.pmsk", cli.out);
    write_file(&fused_path, &write_depth_map(&fused))?;
    write_file(&mask_path, &write_provenance_mask(&mask))?;
    Ok(summary(&[
        ("scale", Val::F(fit.scale)),
        ("shift", Val::F(fit.shift)),
        ("mvs", Val::U(mask.count(PixelClass::Mvs) as u64)),
        ("mono", Val::U(mask.count(PixelClass::Mono) as u64)),
        ("blend", Val::U(mask.count(PixelClass::Blend) as u64)),
        ("invalid", Val::U(mask.count(PixelClass::Invalid) as u64)),
        ("fused", Val::S(fused_path)),
        ("mask", Val::S(mask_path)),
    ]))
}

fn warp(
    cli: &Cli,
    src_cam: &Path,
    dst_cam: &Path,
    features: &Path,
    depth: &Path,
) -> Result<String, CliError> {
    let src_cams = parse_camera_file(&read_text(src_cam)?)?;
    let dst_cams = parse_camera_file(&read_text(dst_cam)?)?;
    let (Some(src), Some(dst)) = (src_cams.first(), dst_cams.first()) else {
        return Err(CliError::format("camera file contains no cameras"));
    };
    let feats = read_feature_map_file(features)?;
    let depth = load_depth(depth)?;
    let (warped, coverage) = forward_warp(src, dst, &feats, &depth)?;
    let out_path = format!("{}.warped.fmap", cli.out);
    write_file(
        &out_path,
        &vsyn_core::aggregation::write_feature_map(&warped),
    )?;
    Ok(summary(&[
        ("covered", Val::U(coverage.valid_count() as u64)),
        (
            "total",
            Val::U(coverage.width() as u64 * coverage.height() as u64),
        ),
        ("warped", Val::S(out_path)),
    ]))
}

fn read_feature_map_file(path: &Path) -> Result<FeatureMap, CliError> {
    Ok(vsyn_core::aggregation::read_feature_map(&read_bytes(
        path,
    )?)?)
}

fn eval_pose(est: &Path, reference: &Path) -> Result<String, CliError> {
    let est = load_graph(est)?;
    let reference = load_graph(reference)?;
    let (aligned, _) = gauge_align(&est, &reference)?;
    let stats = pose_error_stats(&aligned, &reference)?;
    Ok(summary(&[
        ("mean_deg", Val::F(snap(stats.mean.to_degrees()))),
        ("median_deg", Val::F(snap(stats.median.to_degrees()))),
        ("max_deg", Val::F(snap(stats.max.to_degrees()))),
    ]))
}

fn eval_depth(pred: &Path, truth: &Path) -> Result<String, CliError> {
    let pred = load_depth(pred)?;
    let truth = load_depth(truth)?;
    let stats = depth_error_stats(&pred, &truth)?;
    Ok(summary(&[
        ("rmse", Val::F(stats.rmse)),
        ("abs_rel", Val::F(stats.abs_rel)),
        ("valid_fraction", Val::F(stats.valid_fraction)),
    ]))
}

fn run_fig4(cli: &Cli) -> Result<String, CliError> {
    let cfg = load_config(cli)?;
    let report = run_fig4_experiment(&cfg)?;
    let json_path = format!("{}.fig4.json", cli.out);
    let csv_path = format!("{}.fig4.csv", cli.out);
    let full = serde_json::to_string(&report).expect("report serializes");
    write_file(&json_path, full.as_bytes())?;
    write_file(&csv_path, fig4_csv(&report).as_bytes())?;
    if cli.json {
        return Ok(full);
    }
    Ok(summary(&[
        ("trials", Val::U(report.trials as u64)),
        ("mean_init_median_deg", Val::F(report.mean_init_median_deg)),
        (
            "mean_averaged_median_deg",
            Val::F(report.mean_averaged_median_deg),
        ),
        (
            "mean_refined_median_deg",
            Val::F(report.mean_refined_median_deg),
        ),
        (
            "worst_averaged_ratio",
            Val::F(report.worst_averaged_ratio),
        ),
        ("min_recall", Val::F(report.min_recall)),
        ("min_precision", Val::F(report.min_precision)),
        ("report", Val::S(json_path)),
        ("csv", Val::S(csv_path)),
    ]))
}

fn run_fig6(cli: &Cli) -> Result<String, CliError> {
    let cfg = load_config(cli)?;
    let report = run_fig6_experiment(&cfg)?;
    let json_path = format!("{}.fig6.json", cli.out);
    let csv_path = format!("{}.fig6.csv", cli.out);
    let full = serde_json::to_string(&report).expect("report serializes");
    write_file(&json_path, full.as_bytes())?;
    write_file(&csv_path, fig6_csv(&report).as_bytes())?;
    if cli.json {
        return Ok(full);
    }
    Ok(summary(&[
        ("trials", Val::U(report.trials as u64)),
        ("mean_mvs_rmse", Val::F(report.mean_mvs_rmse)),
        ("mean_mono_rmse", Val::F(report.mean_mono_rmse)),
        ("mean_fused_rmse", Val::F(report.mean_fused_rmse)),
        ("all_fused_le_min", Val::B(report.all_fused_le_min)),
        ("max_scale_error_rel", Val::F(report.max_scale_error_rel)),
        ("max_shift_error_rel", Val::F(report.max_shift_error_rel)),
        ("report", Val::S(json_path)),
        ("csv", Val::S(csv_path)),
    ]))
}

fn sweep_sigma(cli: &Cli, sigmas: &str) -> Result<String, CliError> {
    let mut grid = Vec::new();
    for part in sigmas.split(',') {
        let v: f64 = part
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("bad sigma `{part}` in --sigmas")))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(CliError::usage("every sigma must be positive"));
        }
        grid.push(v);
    }
    if grid.is_empty() {
        grid.extend_from_slice(&SIGMA_SWEEP);
    }
    let cfg = load_config(cli)?;
    let rows = run_sigma_sweep(&cfg, &grid)?;
    let csv_path = format!("{}.sweep.csv", cli.out);
    write_file(&csv_path, sweep_csv(&rows).as_bytes())?;
    if cli.json {
        return Ok(serde_json::to_string(&rows).expect("rows serialize"));
    }
    Ok(summary(&[
        ("settings", Val::U(rows.len() as u64)),
        ("csv", Val::S(csv_path)),
    ]))
}

fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::GenGraph => gen_graph(cli),
        Command::GenDepth => gen_depth(cli),
        Command::InitPoses { graph } => init_poses(cli, graph),
        Command::FilterCycles {
            graph,
            threshold_deg,
        } => filter_cycles(cli, graph, *threshold_deg),
        Command::Average {
            graph,
            beta,
            max_iters,
        } => average(cli, graph, *beta, *max_iters),
        Command::RefineMpnn {
            graph,
            hidden,
            steps,
            iters,
            lr,
        } => refine_mpnn(cli, graph, *hidden, *steps, *iters, *lr),
        Command::AlignScale {
            mono,
            mvs,
            conf,
            conf_floor,
        } => align_scale_cmd(mono, mvs, conf, *conf_floor),
        Command::FuseDepth {
            mvs,
            mono,
            mono_conf,
            mvs_conf,
            tau,
            sigma,
        } => fuse_depth(cli, mvs, mono, mono_conf, mvs_conf.as_deref(), *tau, *sigma),
        Command::Warp {
            src_cam,
            dst_cam,
            features,
            depth,
        } => warp(cli, src_cam, dst_cam, features, depth),
        Command::EvalPose { est, reference } => eval_pose(est, reference),
        Command::EvalDepth { pred, truth } => eval_depth(pred, truth),
        Command::RunFig4 => run_fig4(cli),
        Command::RunFig6 => run_fig6(cli),
        Command::SweepSigma { sigmas } => sweep_sigma(cli, sigmas),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("ERROR(usage): {e}");
            return ExitCode::from(1);
        }
    };
    match run(&cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ERROR({}): {}", e.kind, e.msg);
            ExitCode::from(e.code)
        }
    }
}
