mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

/// Multi-view adversarial patch toolkit.
///
/// Exit codes: 0 success, 2 input error, 3 detector error, 4 geometry error.
#[derive(Debug, Parser)]
#[command(name = "patchview", version, about, long_about)]
pub struct Cli {
    /// Seed for every random choice of the run (synth: overrides the spec's seed when given).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses one per CPU.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate a homography from a correspondence file.
    EstimateH(EstimateArgs),
    /// Warp an image with a homography.
    Warp(WarpArgs),
    /// Train an adversarial patch on the reference view of a dataset.
    TrainPatch(TrainArgs),
    /// Composite a patch onto person boxes of one image.
    ApplyPatch(ApplyArgs),
    /// Project patched quads from a reference image into a destination image.
    Project(ProjectArgs),
    /// Measure clean and patched cross-view recall.
    Evaluate(EvalArgs),
    /// Generate a synthetic multi-view dataset.
    Synth(SynthArgs),
    /// Render a report CSV as an aligned table.
    Report(ReportArgs),
    /// Serve canned detections over the bridge protocol on stdin/stdout (for tests).
    StubBridge(StubArgs),
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Correspondence CSV (x_ref,y_ref,x_dst,y_dst).
    #[arg(long)]
    points: PathBuf,
    /// Output file: 3 rows of 3 values.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct WarpArgs {
    #[arg(long)]
    image: PathBuf,
    /// Homography file as written by estimate-h.
    #[arg(long)]
    homography: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Output width [default: source width].
    #[arg(long)]
    width: Option<usize>,
    /// Output height [default: source height].
    #[arg(long)]
    height: Option<usize>,
}

#[derive(Debug, Clone, Args)]
struct DetectorArgs {
    /// Detector: `toy`, or `bridge:CMD` / `bridge:unix:PATH` (evaluation only).
    #[arg(long, default_value = "toy")]
    detector: String,
    /// Toy detector template seed.
    #[arg(long, default_value_t = 7)]
    template_seed: u64,
    /// Toy detector sigmoid steepness.
    #[arg(long, default_value_t = 10.0)]
    steepness: f64,
    /// Toy detector correlation bias.
    #[arg(long, default_value_t = 0.6)]
    bias: f64,
    /// Toy detector window stride in pixels.
    #[arg(long, default_value_t = 8)]
    stride: usize,
}

#[derive(Debug, Clone, Args)]
struct PlacementArgs {
    /// Patch width as a fraction of the person box width.
    #[arg(long, default_value_t = 0.5)]
    scale: f64,
    /// Horizontal patch center within the person box (0 = left, 1 = right).
    #[arg(long, default_value_t = 0.5)]
    anchor_x: f64,
    /// Vertical patch center within the person box (0 = top, 1 = bottom).
    #[arg(long, default_value_t = 0.5)]
    anchor_y: f64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Dataset directory (or manifest file).
    #[arg(long)]
    dataset: PathBuf,
    /// Flat key = value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for patch.png, patch.meta and loss_history.csv.
    #[arg(long)]
    out: PathBuf,
    /// View the patch is trained on [default: the manifest's reference view, else the first view].
    #[arg(long)]
    ref_view: Option<u32>,
    /// More views whose frames join the training pool, comma separated.
    #[arg(long)]
    extra_views: Option<String>,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 300)]
    patch_width: usize,
    #[arg(long, default_value_t = 300)]
    patch_height: usize,
    #[arg(long, default_value_t = 4)]
    minibatch: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.03)]
    lr: f64,
    /// Weight of the non-printability score.
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    /// Weight of total variation (floored at 0.1).
    #[arg(long, default_value_t = 2.5)]
    beta: f64,
    /// Weight of the max objectness.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Printable colors, one `r g b` triple per line [default: bundled palette].
    #[arg(long)]
    palette: Option<PathBuf>,
    #[command(flatten)]
    placement: PlacementArgs,
    #[command(flatten)]
    detector: DetectorArgs,
}

#[derive(Debug, Args)]
struct ApplyArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    patch: PathBuf,
    /// Person box `xmin,ymin,xmax,ymax`; repeat for several persons.
    #[arg(long = "box", required = true, allow_hyphen_values = true)]
    boxes: Vec<String>,
    #[command(flatten)]
    placement: PlacementArgs,
    /// Patched image; the covered quads are printed to stdout.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    /// Destination-view image.
    #[arg(long)]
    dst: PathBuf,
    /// Reference-view image carrying the patch.
    #[arg(long)]
    ref_patched: PathBuf,
    /// Patch quad `x0,y0,x1,y1,x2,y2,x3,y3` in the reference view, as printed by apply-patch; repeatable.
    #[arg(long, required = true, allow_hyphen_values = true)]
    quad: Vec<String>,
    /// Reference → destination homography file.
    #[arg(long)]
    homography: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Dataset directory (or manifest file).
    #[arg(long)]
    dataset: PathBuf,
    /// Flat key = value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Patch PNG.
    #[arg(long)]
    patch: PathBuf,
    /// Reference view [default: from the manifest's view set].
    #[arg(long)]
    ref_view: Option<u32>,
    /// Destination views, comma separated [default: from the manifest's view set].
    #[arg(long)]
    views: Option<String>,
    /// IoU needed for a detection to match a person.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Objectness needed for a detection to count.
    #[arg(long, default_value_t = 0.5)]
    conf: f64,
    #[command(flatten)]
    placement: PlacementArgs,
    #[command(flatten)]
    detector: DetectorArgs,
    /// Output directory for report.csv, report.txt and patched frames.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Rig spec JSON [default: built-in three-view sample].
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long, required_unless_present = "print_sample")]
    out: Option<PathBuf>,
    /// Print the built-in sample spec and exit.
    #[arg(long, default_value_t = false)]
    print_sample: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// report.csv as written by evaluate.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Debug, Args)]
struct StubArgs {
    /// JSON object mapping image file stems to detection lists.
    #[arg(long)]
    replies: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(commands::EXIT_INPUT);
        }
    };
    let matches = match Cli::command().try_get_matches_from(&argv) {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let seed_given = matches.value_source("seed") == Some(ValueSource::CommandLine);

    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
    {
        eprintln!("error: worker pool: {e}");
        return ExitCode::from(commands::EXIT_INPUT);
    }

    match commands::run(cli, seed_given) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
