use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pgnoise::pipeline::{self, CalibrateOptions, GenerateOptions, PipelineError, BUNDLE_ENV};
use pgnoise::validate::{ValidateOptions, ValidationReport, DEFAULT_TOLERANCE};
use pgnoise::{calibration, histogram, Channel};

/// Add realistic smartphone noise to clean sRGB images, or calibrate the
/// noise distribution from clean/noisy pairs.
#[derive(Parser, Debug)]
#[command(name = "pgnoise", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write N noisy realizations (and JSON sidecars) of every image in a directory.
    Generate(GenerateArgs),
    /// Build a parameter bundle from <scene>/<id>_clean.png + <id>_noisy.png pairs.
    Calibrate(CalibrateArgs),
    /// Check a bundle against the variance law var = a*y + b and emit a CSV report.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct BundleArg {
    /// Parameter bundle (JSON). Defaults to $PGNOISE_BUNDLE, then the built-in synthetic example.
    #[arg(long)]
    bundle: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long = "img_dir", visible_alias = "img-dir")]
    img_dir: PathBuf,
    #[arg(long = "out_dir", visible_alias = "out-dir")]
    out_dir: PathBuf,
    /// Noisy realizations per input image.
    #[arg(long = "n_obs", visible_alias = "n-obs", default_value_t = 1)]
    n_obs: usize,
    #[command(flatten)]
    bundle: BundleArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leave values outside [0, 1] unclipped (saving then fails for such images).
    #[arg(long)]
    no_clip: bool,
    /// Draw one parameter set per image instead of one per realization.
    #[arg(long)]
    fixed_params: bool,
    /// Worker threads (default: all cores). Output does not depend on this.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output bit depth, 8 or 16 (default: same as each input).
    #[arg(long)]
    bit_depth: Option<u8>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long = "img_dir", visible_alias = "img-dir")]
    img_dir: PathBuf,
    /// Directory receiving bundle.json.
    #[arg(long = "out_dir", visible_alias = "out-dir")]
    out_dir: PathBuf,
    /// Bins per output histogram.
    #[arg(long, default_value_t = histogram::DEFAULT_BIN_COUNT)]
    bins: usize,
    /// Intensity bins used when estimating (a, b) from one pair.
    #[arg(long, default_value_t = calibration::DEFAULT_ESTIMATION_BINS)]
    estimation_bins: usize,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[command(flatten)]
    bundle: BundleArg,
    /// Write validation.csv here instead of printing the CSV to stdout.
    #[arg(long = "out_dir", visible_alias = "out-dir")]
    out_dir: Option<PathBuf>,
    /// Parameter sets drawn from the bundle.
    #[arg(long, default_value_t = 4)]
    param_sets: usize,
    /// Side of the constant test planes, in pixels.
    #[arg(long, default_value_t = 1024)]
    plane_size: usize,
    /// Intensities to test.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    y_grid: Vec<f64>,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    jobs: Option<usize>,
}

fn generate(args: GenerateArgs) -> Result<(), PipelineError> {
    let (bundle, source) = pipeline::load_bundle(args.bundle.bundle.as_deref())?;
    log::info!("bundle: {source}");
    let options = GenerateOptions {
        seed: args.seed,
        clip: !args.no_clip,
        fixed_params: args.fixed_params,
        jobs: args.jobs,
        bit_depth: args.bit_depth,
        ..GenerateOptions::new(args.img_dir, args.out_dir, args.n_obs)
    };
    let print = |report: &pipeline::GenerateReport| {
        for img in &report.images {
            println!("{}: {} realization(s) -> {}", img.source.display(), img.outputs.len(), options.out_dir.display());
        }
        for f in &report.failures {
            eprintln!("{}: FAILED: {}", f.source.display(), f.message);
        }
    };
    match pipeline::run_generate(&bundle, &options) {
        Ok(report) => {
            print(&report);
            Ok(())
        }
        Err(PipelineError::GenerationFailed { report }) => {
            print(&report);
            Err(PipelineError::GenerationFailed { report })
        }
        Err(e) => Err(e),
    }
}

fn calibrate(args: CalibrateArgs) -> Result<(), PipelineError> {
    let options = CalibrateOptions {
        bin_count: args.bins,
        estimation_bins: args.estimation_bins,
        jobs: args.jobs,
        ..CalibrateOptions::new(args.img_dir, args.out_dir)
    };
    let report = pipeline::run_calibrate(&options)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("{} scene(s) -> {}", report.scenes.len(), report.bundle_path.display());
    println!("{:<6} {:<10} {:>8} {:>13} {:>13} {:>13}", "chan", "histogram", "count", "mean", "min", "max");
    let summaries = report.summaries();
    for c in Channel::ALL {
        for (kind, s) in &summaries[c] {
            println!("{:<6} {:<10} {:>8} {:>13.5e} {:>13.5e} {:>13.5e}", c, kind, s.count, s.mean, s.min, s.max);
        }
    }
    Ok(())
}

fn validate(args: ValidateArgs) -> Result<(), PipelineError> {
    let (bundle, source) = pipeline::load_bundle(args.bundle.bundle.as_deref())?;
    let options = ValidateOptions {
        param_sets: args.param_sets,
        plane_size: args.plane_size,
        y_grid: args.y_grid,
        tolerance: args.tolerance,
        seed: args.seed,
    };
    let csv_path = args.out_dir.map(|d| d.join(pipeline::VALIDATION_FILE_NAME));
    let summarize = |report: &ValidationReport| {
        if csv_path.is_none() {
            print!("{}", report.to_csv());
        }
        let verdict = if report.passed() { "PASS" } else { "FAIL" };
        eprintln!(
            "{verdict}: {} check(s) on {source}, max relative error {:.3}%",
            report.rows.len(),
            100.0 * report.max_rel_err()
        );
    };
    match pipeline::run_validate(&bundle, &options, csv_path.as_deref(), args.jobs) {
        Ok(report) => {
            summarize(&report);
            Ok(())
        }
        Err(PipelineError::ValidationFailed { report }) => {
            summarize(&report);
            Err(PipelineError::ValidationFailed { report })
        }
        Err(e) => Err(e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, PipelineError::Bundle { .. }) && std::env::var_os(BUNDLE_ENV).is_some() {
                eprintln!("note: ${BUNDLE_ENV} is set");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
