//! Subcommand CLI wiring the tomoclass pipeline end to end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error. Every
//! subcommand writes its artifact plus a JSON run manifest next to it.

mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use tomoclass::cube::{
    merge_headings, rasterize_lidar, read_cube, read_label_raster, read_lidar, read_species_map,
    write_cube, PolChannel,
};
use tomoclass::eval::{
    classification_report, confusion_matrix, render_map, render_report_text, write_report_csv,
};
use tomoclass::features::{
    build_table, read_table_csv, write_table_csv, FeatureSpec, FeatureTable, Scale, SplitTag,
};
use tomoclass::geosplit::{
    read_mask, square_split, swath_split, validate_split, write_mask, Orientation, SquareParams,
    SwathParams,
};
use tomoclass::heightstats::{
    class_height_stats, estimate_height_raster, render_stats_text, violin_data, violin_export,
    write_stats_csv, ProfileSource,
};
use tomoclass::hpo::{forest_default_space, gbm_default_space, tune, write_trace_csv, ParamSpace};
use tomoclass::learners::{
    predict, read_model, train_forest_with_columns, train_gbm_with_columns,
    train_tree_with_columns, write_model, ColumnSet, FeatureCandidates, ForestParams, GbmParams,
    Model, Objective, TreeParams,
};
use tomoclass::synth::{generate_scene, write_scene, SceneConfig};

use config::PipelineConfig;
use manifest::Manifest;

/// Usage errors exit 1, data/format errors exit 2.
pub(crate) struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub(crate) fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<tomoclass::Error> for CliError {
    fn from(e: tomoclass::Error) -> Self {
        let code = match e {
            tomoclass::Error::Parameter(_) => 1,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError {
            code: 2,
            message: e.to_string(),
        }
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(
    name = "tomoclass",
    version,
    about = "Tomographic SAR tree-species classification pipeline"
)]
struct Cli {
    /// Worker threads (default: logical cores, or TOMOCLASS_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene (cube pair, labels, LiDAR, ground truth).
    Synth(SynthArgs),
    /// Merge the NW and SE heading cubes into one.
    Merge(MergeArgs),
    /// Build a spatial train/test split mask.
    Split(SplitArgs),
    /// Flatten a cube into the labeled feature table.
    Features(FeaturesArgs),
    /// Train a single model with fixed hyperparameters.
    Train(TrainArgs),
    /// Bayesian-optimize hyperparameters, then train the best model.
    Tune(TuneArgs),
    /// Evaluate a model on a feature table split.
    Evaluate(EvaluateArgs),
    /// LiDAR height statistics and violin data.
    Heightstats(HeightstatsArgs),
    /// Render the truth/prediction class map as PPM.
    Render(RenderArgs),
    /// Run the whole pipeline on a synthetic scene.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Grid as RANGExAZIMUTH, e.g. 168x120.
    #[arg(long, default_value = "168x120")]
    dims: String,
    /// Use the full survey grid (326x840); overrides --dims.
    #[arg(long)]
    full: bool,
    /// Multiplicative noise level.
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    /// Expected pixels per species patch.
    #[arg(long, default_value_t = 256)]
    granularity: usize,
    /// Output directory.
    #[arg(long, default_value = "scene")]
    out: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    nw: PathBuf,
    #[arg(long)]
    se: PathBuf,
    #[arg(long, default_value = "merged.tomo")]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Species label raster (for dims and the labeled-fraction contract).
    #[arg(long)]
    labels: PathBuf,
    /// swath or square.
    #[arg(long, default_value = "swath")]
    method: String,
    /// Test fraction target (swath band width / square coverage).
    #[arg(long, default_value_t = 0.20)]
    test_frac: f64,
    /// Square side as a fraction of the grid width.
    #[arg(long, default_value_t = 0.05)]
    side_frac: f64,
    /// Fraction tolerance.
    #[arg(long, default_value_t = 0.02)]
    tolerance: f64,
    /// Excluded buffer width in pixels around the test region.
    #[arg(long, default_value_t = 0)]
    buffer: usize,
    /// Horizontal swath (bands over rows instead of columns).
    #[arg(long)]
    horizontal: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "mask.lbl")]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Cube file (usually the merged cube).
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Comma-separated channel list, e.g. HH,HV,VV.
    #[arg(long, default_value = "HH,HV,VV")]
    channels: String,
    /// Drop the x,y coordinate features.
    #[arg(long)]
    no_xy: bool,
    /// linear or db.
    #[arg(long, default_value = "linear")]
    scale: String,
    #[arg(long, default_value_t = -60.0, allow_hyphen_values = true)]
    db_floor: f64,
    #[arg(long, default_value = "features.csv")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct LearnerArgs {
    /// tree, forest, or gbm.
    #[arg(long, default_value = "gbm")]
    learner: String,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    /// all, sqrt, or a count.
    #[arg(long)]
    feature_candidates: Option<String>,
    /// Inverse-frequency class weighting.
    #[arg(long)]
    balanced: bool,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    subsample: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    learner: LearnerArgs,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "model.tcml")]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    features: PathBuf,
    /// forest or gbm.
    #[arg(long, default_value = "gbm")]
    learner: String,
    #[arg(long, default_value_t = 16)]
    budget: usize,
    /// accuracy or balanced-accuracy.
    #[arg(long, default_value = "accuracy")]
    objective: String,
    /// Inner validation holdout fraction of the train rows.
    #[arg(long, default_value_t = 0.2)]
    val_frac: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value = "model.tcml")]
    out: PathBuf,
    #[arg(long, default_value = "trace.csv")]
    trace: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// test, train, or all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Write the report text here (also printed).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Full-precision CSV report.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write the predicted-label raster (needs --labels for dims).
    #[arg(long)]
    pred_out: Option<PathBuf>,
    /// Write per-row class probabilities as CSV.
    #[arg(long)]
    probs_out: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct HeightstatsArgs {
    #[arg(long)]
    lidar: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Cube for the tomographic height estimate (usually merged).
    #[arg(long)]
    cube: PathBuf,
    /// Relative peak threshold in dB for the height estimator.
    #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
    threshold_db: f64,
    /// Profile source: first, mean, HH, HV, or VV.
    #[arg(long, default_value = "first")]
    source: String,
    #[arg(long, default_value_t = 257)]
    grid_points: usize,
    #[arg(long, default_value = "heightstats.txt")]
    table: PathBuf,
    #[arg(long, default_value = "heightstats.csv")]
    csv: PathBuf,
    #[arg(long, default_value = "violin.csv")]
    violin: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long, default_value = "map.ppm")]
    out: PathBuf,
}

#[derive(Args)]
pub(crate) struct PipelineArgs {
    /// Output directory for all artifacts.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// TOML config file; command-line flags win over its keys.
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    #[arg(long)]
    pub(crate) synth_seed: Option<u64>,
    #[arg(long)]
    pub(crate) split_seed: Option<u64>,
    #[arg(long)]
    pub(crate) train_seed: Option<u64>,
    #[arg(long)]
    pub(crate) dims: Option<String>,
    #[arg(long)]
    pub(crate) full: bool,
    #[arg(long)]
    pub(crate) noise: Option<f64>,
    #[arg(long)]
    pub(crate) granularity: Option<usize>,
    /// swath or square.
    #[arg(long)]
    pub(crate) split: Option<String>,
    #[arg(long)]
    pub(crate) test_frac: Option<f64>,
    #[arg(long)]
    pub(crate) side_frac: Option<f64>,
    #[arg(long)]
    pub(crate) buffer: Option<usize>,
    #[arg(long)]
    pub(crate) channels: Option<String>,
    /// true/false: include x,y features.
    #[arg(long)]
    pub(crate) xy: Option<bool>,
    #[arg(long)]
    pub(crate) scale: Option<String>,
    /// tree, forest, or gbm.
    #[arg(long)]
    pub(crate) learner: Option<String>,
    /// 0 trains with fixed params; >= 2 runs Bayesian optimization.
    #[arg(long)]
    pub(crate) tune_budget: Option<usize>,
    #[arg(long)]
    pub(crate) objective: Option<String>,
    #[arg(long)]
    pub(crate) val_frac: Option<f64>,
    #[arg(long)]
    pub(crate) rounds: Option<usize>,
    #[arg(long)]
    pub(crate) learning_rate: Option<f64>,
    #[arg(long)]
    pub(crate) max_depth: Option<usize>,
    #[arg(long)]
    pub(crate) min_leaf: Option<usize>,
    #[arg(long)]
    pub(crate) trees: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };

    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("TOMOCLASS_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build_global()
    {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }

    match run(cli.command, threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn run(command: Command, threads: usize) -> CliResult {
    match command {
        Command::Synth(args) => cmd_synth(args, threads),
        Command::Merge(args) => cmd_merge(args, threads),
        Command::Split(args) => cmd_split(args, threads),
        Command::Features(args) => cmd_features(args, threads),
        Command::Train(args) => cmd_train(args, threads),
        Command::Tune(args) => cmd_tune(args, threads),
        Command::Evaluate(args) => cmd_evaluate(args, threads),
        Command::Heightstats(args) => cmd_heightstats(args, threads),
        Command::Render(args) => cmd_render(args, threads),
        Command::Pipeline(args) => cmd_pipeline(args, threads),
    }
}

pub(crate) fn parse_dims(s: &str) -> Result<(usize, usize), CliError> {
    let (r, a) = s
        .split_once('x')
        .ok_or_else(|| CliError::usage(format!("dims must look like 168x120, got {s:?}")))?;
    let nr = r
        .parse()
        .map_err(|_| CliError::usage(format!("bad range extent {r:?}")))?;
    let na = a
        .parse()
        .map_err(|_| CliError::usage(format!("bad azimuth extent {a:?}")))?;
    Ok((nr, na))
}

pub(crate) fn parse_channels(s: &str) -> Result<Vec<PolChannel>, CliError> {
    s.split(',')
        .map(|c| PolChannel::parse(c.trim()).map_err(|e| CliError::usage(e.to_string())))
        .collect()
}

pub(crate) fn parse_scale(s: &str) -> Result<Scale, CliError> {
    Scale::parse(s).map_err(|e| CliError::usage(e.to_string()))
}

pub(crate) fn parse_objective(s: &str) -> Result<Objective, CliError> {
    match s {
        "accuracy" => Ok(Objective::Accuracy),
        "balanced-accuracy" => Ok(Objective::BalancedAccuracy),
        other => Err(CliError::usage(format!(
            "objective must be accuracy or balanced-accuracy, got {other:?}"
        ))),
    }
}

pub(crate) fn check_fraction(name: &str, v: f64) -> CliResult {
    if !(v > 0.0 && v < 1.0) {
        return Err(CliError::usage(format!("{name} must be in (0,1)")));
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let (n_range, n_azimuth) = if args.full {
        (326, 840)
    } else {
        parse_dims(&args.dims)?
    };
    if args.noise < 0.0 {
        return Err(CliError::usage("noise must be nonnegative"));
    }
    let cfg = SceneConfig {
        n_range,
        n_azimuth,
        noise: args.noise,
        patch_cells: args.granularity.max(1),
        seed: args.seed,
        ..SceneConfig::default()
    };
    let scene = generate_scene(&cfg)?;
    write_scene(&scene, &args.out)?;
    println!("scene {}x{} px, seed {}", n_range, n_azimuth, args.seed);
    for (id, n) in scene.map.class_counts() {
        println!(
            "  class {id}: {n} px ({:.2}%)",
            100.0 * n as f64 / (n_range * n_azimuth) as f64
        );
    }
    Manifest::new("synth", threads)
        .seed("scene", args.seed)
        .param("dims", format!("{n_range}x{n_azimuth}"))
        .param("noise", args.noise)
        .param("granularity", args.granularity)
        .output("nw", args.out.join("nw.tomo"))
        .output("se", args.out.join("se.tomo"))
        .output("labels", args.out.join("labels.lbl"))
        .output("lidar", args.out.join("lidar.txt"))
        .output("true_height", args.out.join("true_height.csv"))
        .write(&args.out.join("synth.manifest.json"), start)?;
    Ok(())
}

fn cmd_merge(args: MergeArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let nw = read_cube(&args.nw)?;
    let se = read_cube(&args.se)?;
    let merged = merge_headings(&nw, &se)?;
    write_cube(&merged, &args.out)?;
    let valid = merged.valid_mask().iter().filter(|&&v| v).count();
    println!(
        "merged {}x{} cube: {} of {} pixels valid",
        merged.n_range,
        merged.n_azimuth,
        valid,
        merged.n_range * merged.n_azimuth
    );
    Manifest::new("merge", threads)
        .input("nw", &args.nw)
        .input("se", &args.se)
        .output("merged", &args.out)
        .write(&manifest_path(&args.out), start)?;
    Ok(())
}

fn manifest_path(primary: &Path) -> PathBuf {
    let mut s = primary.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn cmd_split(args: SplitArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    check_fraction("test-frac", args.test_frac)?;
    let map = read_species_map(&args.labels)?;
    let mask = match args.method.as_str() {
        "swath" => swath_split(
            &map,
            &SwathParams {
                test_width_frac: args.test_frac,
                orientation: if args.horizontal {
                    Orientation::Horizontal
                } else {
                    Orientation::Vertical
                },
                buffer_px: args.buffer,
                tolerance: args.tolerance,
            },
            args.seed,
        )?,
        "square" => {
            check_fraction("side-frac", args.side_frac)?;
            square_split(
                &map,
                &SquareParams {
                    square_side_frac: args.side_frac,
                    target_test_frac: args.test_frac,
                    tolerance: args.tolerance,
                    buffer_px: args.buffer,
                    ..SquareParams::default()
                },
                args.seed,
            )?
        }
        m => return Err(CliError::usage(format!("unknown split method {m:?}"))),
    };
    write_mask(&mask, &args.out)?;
    let report = validate_split(&mask, &map)?;
    println!(
        "{} split: test fraction {:.4} over {} labeled px, {} test component(s)",
        args.method,
        report.achieved_test_frac,
        report.labeled_total(),
        report.test_components
    );
    for w in &report.warnings {
        println!("  warning: {w}");
    }
    Manifest::new("split", threads)
        .input("labels", &args.labels)
        .seed("split", args.seed)
        .param("method", args.method.clone())
        .param("test_frac", args.test_frac)
        .param("buffer", args.buffer)
        .param("achieved_test_frac", report.achieved_test_frac)
        .output("mask", &args.out)
        .write(&manifest_path(&args.out), start)?;
    Ok(())
}

fn cmd_features(args: FeaturesArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let cube = read_cube(&args.cube)?;
    let map = read_species_map(&args.labels)?;
    let mask = read_mask(&args.mask)?;
    let spec = FeatureSpec {
        channels: parse_channels(&args.channels)?,
        include_xy: !args.no_xy,
        scale: parse_scale(&args.scale)?,
        db_floor: args.db_floor,
    };
    let table = build_table(&cube, &map, &mask, &spec)?;
    write_table_csv(&table, &args.out)?;
    println!(
        "feature table: {} rows x {} features ({} train / {} test)",
        table.n_rows(),
        table.n_features,
        table.rows_with_split(SplitTag::Train).len(),
        table.rows_with_split(SplitTag::Test).len()
    );
    Manifest::new("features", threads)
        .input("cube", &args.cube)
        .input("labels", &args.labels)
        .input("mask", &args.mask)
        .param("channels", args.channels.clone())
        .param("include_xy", !args.no_xy)
        .param("scale", args.scale.clone())
        .param("n_rows", table.n_rows())
        .param("n_features", table.n_features)
        .output("features", &args.out)
        .write(&manifest_path(&args.out), start)?;
    Ok(())
}

fn tree_params_from(args: &LearnerArgs, default: TreeParams) -> Result<TreeParams, CliError> {
    let feature_candidates = match args.feature_candidates.as_deref() {
        None => default.feature_candidates,
        Some("all") => FeatureCandidates::All,
        Some("sqrt") => FeatureCandidates::Sqrt,
        Some(n) => FeatureCandidates::Count(
            n.parse()
                .map_err(|_| CliError::usage(format!("bad feature-candidates {n:?}")))?,
        ),
    };
    Ok(TreeParams {
        max_depth: args.max_depth.unwrap_or(default.max_depth),
        min_samples_leaf: args.min_leaf.unwrap_or(default.min_samples_leaf),
        feature_candidates,
        class_weighting: args.balanced,
    })
}

/// Trains the requested learner on the TRAIN rows of the table.
fn train_learner(
    table: &FeatureTable,
    args: &LearnerArgs,
    seed: u64,
) -> Result<(Model, usize), CliError> {
    let train_rows = table.rows_with_split(SplitTag::Train);
    if train_rows.is_empty() {
        return Err(CliError::from(tomoclass::Error::Data(
            "feature table has no TRAIN rows".into(),
        )));
    }
    let train = table.subset(&train_rows);
    let cols = ColumnSet::from_table(&train);
    let model = match args.learner.as_str() {
        "tree" => {
            let params = tree_params_from(args, TreeParams::default())?;
            train_tree_with_columns(&train, &cols, &params, seed)?
        }
        "forest" => {
            let defaults = ForestParams::default();
            let params = ForestParams {
                n_trees: args.trees.unwrap_or(defaults.n_trees),
                tree: tree_params_from(args, defaults.tree)?,
                bootstrap: true,
            };
            train_forest_with_columns(&train, &cols, &params, seed)?
        }
        "gbm" => {
            let defaults = GbmParams::default();
            let params = GbmParams {
                n_rounds: args.rounds.unwrap_or(defaults.n_rounds),
                learning_rate: args.learning_rate.unwrap_or(defaults.learning_rate),
                tree: tree_params_from(args, defaults.tree)?,
                subsample: args.subsample.unwrap_or(defaults.subsample),
            };
            train_gbm_with_columns(&train, &cols, &params, seed)?
        }
        l => return Err(CliError::usage(format!("unknown learner {l:?}"))),
    };
    Ok((model, train.n_rows()))
}

fn cmd_train(args: TrainArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let table = read_table_csv(&args.features)?;
    let (model, n_train) = train_learner(&table, &args.learner, args.seed)?;
    write_model(&model, &args.out)?;
    let train_rows = table.rows_with_split(SplitTag::Train);
    let train = table.subset(&train_rows);
    let pred = predict(&model, &train)?;
    let hits = pred
        .labels
        .iter()
        .zip(train.labels())
        .filter(|(a, b)| a == b)
        .count();
    println!(
        "{} trained on {} rows; train accuracy {:.4}",
        args.learner.learner,
        n_train,
        hits as f64 / n_train as f64
    );
    Manifest::new("train", threads)
        .input("features", &args.features)
        .seed("train", args.seed)
        .param("learner", args.learner.learner.clone())
        .param("n_train_rows", n_train)
        .output("model", &args.out)
        .write(&manifest_path(&args.out), start)?;
    Ok(())
}

/// Scores argmax predictions of a model on a table.
fn score_model(model: &Model, table: &FeatureTable, objective: Objective) -> Result<f64, tomoclass::Error> {
    let pred = predict(model, table)?;
    let k = model.classes.len();
    let mut support = vec![0usize; k];
    let mut hits = vec![0usize; k];
    for (i, &l) in table.labels().iter().enumerate() {
        if let Some(c) = model.classes.iter().position(|&x| x == l) {
            support[c] += 1;
            if pred.labels[i] == l {
                hits[c] += 1;
            }
        }
    }
    Ok(match objective {
        Objective::Accuracy => hits.iter().sum::<usize>() as f64 / table.n_rows() as f64,
        Objective::BalancedAccuracy => {
            let mut sum = 0.0;
            let mut used = 0;
            for (h, s) in hits.iter().zip(&support) {
                if *s > 0 {
                    sum += *h as f64 / *s as f64;
                    used += 1;
                }
            }
            if used == 0 {
                0.0
            } else {
                sum / used as f64
            }
        }
    })
}

/// Tunes hyperparameters on an inner holdout carved from the TRAIN rows,
/// then retrains the incumbent configuration on all TRAIN rows.
pub(crate) fn tune_learner(
    table: &FeatureTable,
    learner: &str,
    budget: usize,
    objective: Objective,
    val_frac: f64,
    seed: u64,
) -> Result<(Model, tomoclass::hpo::TuneResult, ParamSpace), CliError> {
    use rand::seq::SliceRandom;

    check_fraction("val-frac", val_frac)?;
    let train_rows = table.rows_with_split(SplitTag::Train);
    if train_rows.len() < 10 {
        return Err(CliError::from(tomoclass::Error::Data(
            "need at least 10 TRAIN rows to tune".into(),
        )));
    }
    let mut shuffled = train_rows.clone();
    let mut rng = tomoclass::rng::stream_rng(seed, 10);
    shuffled.shuffle(&mut rng);
    let n_val = ((shuffled.len() as f64 * val_frac).round() as usize).clamp(1, shuffled.len() - 1);
    let (val_rows, fit_rows) = shuffled.split_at(n_val);
    let fit = table.subset(fit_rows);
    let val = table.subset(val_rows);
    let fit_cols = ColumnSet::from_table(&fit);

    let space = match learner {
        "gbm" => gbm_default_space(),
        "forest" => forest_default_space(),
        l => return Err(CliError::usage(format!("cannot tune learner {l:?}"))),
    };

    let result = match learner {
        "gbm" => tune(
            |p| {
                let params = GbmParams {
                    learning_rate: p.get("learning_rate"),
                    n_rounds: p.get_usize("n_rounds"),
                    tree: TreeParams {
                        max_depth: p.get_usize("max_depth"),
                        ..TreeParams::default()
                    },
                    subsample: 1.0,
                };
                let model = train_gbm_with_columns(&fit, &fit_cols, &params, seed)?;
                score_model(&model, &val, objective).map(|s| -s)
            },
            &space,
            budget,
            seed,
        )?,
        _ => tune(
            |p| {
                let params = ForestParams {
                    n_trees: p.get_usize("n_trees"),
                    tree: TreeParams {
                        max_depth: p.get_usize("max_depth"),
                        feature_candidates: FeatureCandidates::Sqrt,
                        ..TreeParams::default()
                    },
                    bootstrap: true,
                };
                let model = train_forest_with_columns(&fit, &fit_cols, &params, seed)?;
                score_model(&model, &val, objective).map(|s| -s)
            },
            &space,
            budget,
            seed,
        )?,
    };

    let full = table.subset(&train_rows);
    let full_cols = ColumnSet::from_table(&full);
    let best = &result.best_params;
    let model = match learner {
        "gbm" => {
            let params = GbmParams {
                learning_rate: best[space.index_of("learning_rate").unwrap()],
                n_rounds: best[space.index_of("n_rounds").unwrap()].round() as usize,
                tree: TreeParams {
                    max_depth: best[space.index_of("max_depth").unwrap()].round() as usize,
                    ..TreeParams::default()
                },
                subsample: 1.0,
            };
            train_gbm_with_columns(&full, &full_cols, &params, seed)?
        }
        _ => {
            let params = ForestParams {
                n_trees: best[space.index_of("n_trees").unwrap()].round() as usize,
                tree: TreeParams {
                    max_depth: best[space.index_of("max_depth").unwrap()].round() as usize,
                    feature_candidates: FeatureCandidates::Sqrt,
                    ..TreeParams::default()
                },
                bootstrap: true,
            };
            train_forest_with_columns(&full, &full_cols, &params, seed)?
        }
    };
    Ok((model, result, space))
}

fn cmd_tune(args: TuneArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    if args.budget < 2 {
        return Err(CliError::usage("budget must be at least 2"));
    }
    let objective = parse_objective(&args.objective)?;
    let table = read_table_csv(&args.features)?;
    let (model, result, space) = tune_learner(
        &table,
        &args.learner,
        args.budget,
        objective,
        args.val_frac,
        args.seed,
    )?;
    write_model(&model, &args.out)?;
    write_trace_csv(&result, &space, &args.trace)?;
    println!(
        "tuned {} over {} trials; best validation {} {:.4}",
        args.learner,
        result.trials.len(),
        args.objective,
        -result.best_objective
    );
    for (dim, value) in space.dims.iter().zip(&result.best_params) {
        println!("  {} = {}", dim.name, value);
    }
    Manifest::new("tune", threads)
        .input("features", &args.features)
        .seed("tune", args.seed)
        .param("learner", args.learner.clone())
        .param("budget", args.budget)
        .param("objective", args.objective.clone())
        .param("best_objective", -result.best_objective)
        .output("model", &args.out)
        .output("trace", &args.trace)
        .write(&manifest_path(&args.out), start)?;
    Ok(())
}

fn rows_for_split(table: &FeatureTable, split: &str) -> Result<Vec<usize>, CliError> {
    Ok(match split {
        "test" => table.rows_with_split(SplitTag::Test),
        "train" => table.rows_with_split(SplitTag::Train),
        "all" => (0..table.n_rows()).collect(),
        s => {
            return Err(CliError::usage(format!(
                "split must be test, train, or all, got {s:?}"
            )))
        }
    })
}

fn cmd_evaluate(args: EvaluateArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let model = read_model(&args.model)?;
    let table = read_table_csv(&args.features)?;
    let rows = rows_for_split(&table, &args.split)?;
    if rows.is_empty() {
        return Err(CliError::from(tomoclass::Error::Data(format!(
            "no {} rows to evaluate",
            args.split
        ))));
    }
    let subset = table.subset(&rows);
    let pred = predict(&model, &subset)?;
    let cm = confusion_matrix(subset.labels(), &pred.labels, &model.classes)?;
    let report = classification_report(&cm)?;
    let text = render_report_text(&report);
    print!("{text}");
    let mut manifest = Manifest::new("evaluate", threads)
        .input("model", &args.model)
        .input("features", &args.features)
        .param("split", args.split.clone())
        .param("accuracy", report.accuracy)
        .param("balanced_accuracy", report.balanced_accuracy)
        .param("macro_f1", report.macro_f1)
        .param("weighted_f1", report.weighted_f1);
    if let Some(path) = &args.report {
        std::fs::write(path, &text)?;
        manifest = manifest.output("report", path);
    }
    if let Some(path) = &args.csv {
        write_report_csv(&report, path)?;
        manifest = manifest.output("report_csv", path);
    }
    if let Some(path) = &args.probs_out {
        use std::fmt::Write as _;
        let mut csv = String::from("x,y,label,pred");
        for c in &model.classes {
            write!(csv, ",p_{c}").unwrap();
        }
        csv.push('\n');
        for i in 0..subset.n_rows() {
            let (x, y) = subset.coords(i);
            write!(csv, "{x},{y},{},{}", subset.label(i), pred.labels[i]).unwrap();
            for p in pred.probabilities(i) {
                write!(csv, ",{p}").unwrap();
            }
            csv.push('\n');
        }
        std::fs::write(path, csv)?;
        manifest = manifest.output("probs", path);
    }
    if let Some(path) = &args.pred_out {
        let labels_path = args
            .labels
            .as_ref()
            .ok_or_else(|| CliError::usage("--pred-out needs --labels for the raster dims"))?;
        let map = read_species_map(labels_path)?;
        let mut raster = vec![0u8; map.n_range * map.n_azimuth];
        for (i, &label) in pred.labels.iter().enumerate() {
            let (x, y) = subset.coords(i);
            raster[y as usize * map.n_azimuth + x as usize] = label;
        }
        tomoclass::cube::write_label_raster(map.n_range, map.n_azimuth, &raster, path)?;
        manifest = manifest.output("pred", path);
    }
    let manifest_anchor = args
        .report
        .clone()
        .or(args.csv.clone())
        .unwrap_or_else(|| PathBuf::from("evaluate"));
    manifest.write(&manifest_path(&manifest_anchor), start)?;
    Ok(())
}

fn parse_source(s: &str) -> Result<ProfileSource, CliError> {
    Ok(match s {
        "first" => ProfileSource::FirstChannel,
        "mean" => ProfileSource::ChannelMean,
        other => ProfileSource::Channel(
            PolChannel::parse(other).map_err(|e| CliError::usage(e.to_string()))?,
        ),
    })
}

fn cmd_heightstats(args: HeightstatsArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let map = read_species_map(&args.labels)?;
    let mask = read_mask(&args.mask)?;
    let cube = read_cube(&args.cube)?;
    let lidar = read_lidar(&args.lidar)?;
    let (chm, dropped) = rasterize_lidar(&lidar, map.n_range, map.n_azimuth)?;
    if dropped > 0 {
        println!("note: {dropped} LiDAR points fell outside the grid");
    }
    let est = estimate_height_raster(&cube, parse_source(&args.source)?, args.threshold_db)?;
    let rows = class_height_stats(&chm, &map, &mask, &est)?;
    let text = render_stats_text(&rows);
    print!("{text}");
    std::fs::write(&args.table, &text)?;
    write_stats_csv(&rows, &args.csv)?;
    let blocks = violin_data(&chm, &map, &mask, args.grid_points)?;
    violin_export(&blocks, &args.violin)?;
    Manifest::new("heightstats", threads)
        .input("lidar", &args.lidar)
        .input("labels", &args.labels)
        .input("mask", &args.mask)
        .input("cube", &args.cube)
        .param("threshold_db", args.threshold_db)
        .param("source", args.source.clone())
        .param("dropped_points", dropped)
        .output("table", &args.table)
        .output("csv", &args.csv)
        .output("violin", &args.violin)
        .write(&manifest_path(&args.table), start)?;
    Ok(())
}

fn cmd_render(args: RenderArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let map = read_species_map(&args.labels)?;
    let (nr, na, pred) = read_label_raster(&args.pred)?;
    if nr != map.n_range || na != map.n_azimuth {
        return Err(CliError::from(tomoclass::Error::Shape(format!(
            "prediction raster is {nr}x{na}, labels are {}x{}",
            map.n_range, map.n_azimuth
        ))));
    }
    render_map(&map, &pred, &args.out)?;
    println!("wrote {}", args.out.display());
    Manifest::new("render", threads)
        .input("labels", &args.labels)
        .input("pred", &args.pred)
        .output("map", &args.out)
        .write(&manifest_path(&args.out), start)?;
    Ok(())
}

fn cmd_pipeline(args: PipelineArgs, threads: usize) -> CliResult {
    let start = Instant::now();
    let cfg = PipelineConfig::resolve(&args)?;
    let out = &args.out;
    std::fs::create_dir_all(out)?;

    // 1. Scene.
    let scene_cfg = SceneConfig {
        n_range: cfg.dims.0,
        n_azimuth: cfg.dims.1,
        noise: cfg.noise,
        patch_cells: cfg.granularity,
        seed: cfg.synth_seed,
        ..SceneConfig::default()
    };
    let scene = generate_scene(&scene_cfg)?;
    write_scene(&scene, out)?;
    println!("[1/7] scene {}x{} written", cfg.dims.0, cfg.dims.1);

    // 2. Merge headings.
    let merged = merge_headings(&scene.nw, &scene.se)?;
    write_cube(&merged, &out.join("merged.tomo"))?;
    println!("[2/7] headings merged");

    // 3. Split.
    let mask = if cfg.split == "square" {
        square_split(
            &scene.map,
            &SquareParams {
                square_side_frac: cfg.side_frac,
                target_test_frac: cfg.test_frac,
                buffer_px: cfg.buffer,
                ..SquareParams::default()
            },
            cfg.split_seed,
        )?
    } else {
        swath_split(
            &scene.map,
            &SwathParams {
                test_width_frac: cfg.test_frac,
                buffer_px: cfg.buffer,
                ..SwathParams::default()
            },
            cfg.split_seed,
        )?
    };
    write_mask(&mask, &out.join("mask.lbl"))?;
    let split_report = validate_split(&mask, &scene.map)?;
    println!(
        "[3/7] {} split: test fraction {:.4}, {} component(s)",
        cfg.split, split_report.achieved_test_frac, split_report.test_components
    );

    // 4. Features.
    let spec = FeatureSpec {
        channels: cfg.channels.clone(),
        include_xy: cfg.xy,
        scale: cfg.scale,
        db_floor: -60.0,
    };
    let table = build_table(&merged, &scene.map, &mask, &spec)?;
    write_table_csv(&table, &out.join("features.csv"))?;
    println!(
        "[4/7] features: {} rows x {} columns",
        table.n_rows(),
        table.n_features
    );

    // 5. Model.
    let model = if cfg.tune_budget >= 2 {
        let (model, result, space) = tune_learner(
            &table,
            &cfg.learner,
            cfg.tune_budget,
            cfg.objective,
            cfg.val_frac,
            cfg.train_seed,
        )?;
        write_trace_csv(&result, &space, &out.join("trace.csv"))?;
        println!(
            "[5/7] tuned {} ({} trials, best {} {:.4})",
            cfg.learner,
            result.trials.len(),
            cfg.objective.name(),
            -result.best_objective
        );
        model
    } else {
        let learner_args = LearnerArgs {
            learner: cfg.learner.clone(),
            max_depth: cfg.max_depth,
            min_leaf: cfg.min_leaf,
            feature_candidates: None,
            balanced: false,
            trees: cfg.trees,
            rounds: cfg.rounds,
            learning_rate: cfg.learning_rate,
            subsample: None,
        };
        let (model, n) = train_learner(&table, &learner_args, cfg.train_seed)?;
        println!("[5/7] trained {} on {n} rows", cfg.learner);
        model
    };
    write_model(&model, &out.join("model.tcml"))?;

    // 6. Evaluation on the held-out TEST rows.
    let test_rows = table.rows_with_split(SplitTag::Test);
    if test_rows.is_empty() {
        return Err(CliError::from(tomoclass::Error::Data(
            "split produced no TEST rows".into(),
        )));
    }
    let test = table.subset(&test_rows);
    let pred = predict(&model, &test)?;
    let cm = confusion_matrix(test.labels(), &pred.labels, &model.classes)?;
    let report = classification_report(&cm)?;
    std::fs::write(out.join("report.txt"), render_report_text(&report))?;
    write_report_csv(&report, &out.join("report.csv"))?;
    let mut pred_raster = vec![0u8; scene.map.n_range * scene.map.n_azimuth];
    for (i, &label) in pred.labels.iter().enumerate() {
        let (x, y) = test.coords(i);
        pred_raster[y as usize * scene.map.n_azimuth + x as usize] = label;
    }
    tomoclass::cube::write_label_raster(
        scene.map.n_range,
        scene.map.n_azimuth,
        &pred_raster,
        &out.join("pred.lbl"),
    )?;
    render_map(&scene.map, &pred_raster, &out.join("map.ppm"))?;
    println!(
        "[6/7] test accuracy {:.4}, balanced {:.4}, macro F1 {:.4}, weighted F1 {:.4}",
        report.accuracy, report.balanced_accuracy, report.macro_f1, report.weighted_f1
    );

    // 7. Height statistics against the LiDAR reference.
    let (chm, _) = rasterize_lidar(&scene.lidar, scene.map.n_range, scene.map.n_azimuth)?;
    let est = estimate_height_raster(&merged, ProfileSource::FirstChannel, -3.0)?;
    let rows = class_height_stats(&chm, &scene.map, &mask, &est)?;
    std::fs::write(out.join("heightstats.txt"), render_stats_text(&rows))?;
    write_stats_csv(&rows, &out.join("heightstats.csv"))?;
    let blocks = violin_data(&chm, &scene.map, &mask, 257)?;
    violin_export(&blocks, &out.join("violin.csv"))?;
    println!("[7/7] height statistics written");

    Manifest::new("pipeline", threads)
        .seed("scene", cfg.synth_seed)
        .seed("split", cfg.split_seed)
        .seed("train", cfg.train_seed)
        .param("dims", format!("{}x{}", cfg.dims.0, cfg.dims.1))
        .param("noise", cfg.noise)
        .param("granularity", cfg.granularity)
        .param("split", cfg.split.clone())
        .param("test_frac", cfg.test_frac)
        .param("learner", cfg.learner.clone())
        .param("tune_budget", cfg.tune_budget)
        .param("xy", cfg.xy)
        .param("accuracy", report.accuracy)
        .param("balanced_accuracy", report.balanced_accuracy)
        .output("report", out.join("report.txt"))
        .output("report_csv", out.join("report.csv"))
        .output("model", out.join("model.tcml"))
        .output("map", out.join("map.ppm"))
        .output("heightstats", out.join("heightstats.csv"))
        .write(&out.join("pipeline.manifest.json"), start)?;
    println!("pipeline complete: {}", out.display());
    Ok(())
}
