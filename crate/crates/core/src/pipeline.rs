//! Batch drivers behind the `generate`, `calibrate` and `validate`
//! commands. The CLI only parses flags and prints; everything else is here.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | I/O failure |
//! | 2 | bad input: arguments, missing images, unreadable bundle |
//! | 3 | calibration failed |
//! | 4 | variance check failed |
//! | 5 | one or more images failed to generate |

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bundle_io::{self, BundleError};
use crate::calibration::{self, CalibrationError, SceneCalibration, ScenePair};
use crate::generator::{GeneratorError, NoiseGenerator, ParamBundle};
use crate::histogram::{Histogram, DEFAULT_BIN_COUNT};
use crate::image_io::{self, ImageIoError, Sidecar};
use crate::model::{Channel, NoiseParams, Rgb};
use crate::par;
use crate::rng::NoiseStream;
use crate::synthetic;
use crate::validate::{self, ValidateOptions, ValidationReport};

/// Environment variable naming the bundle used when none is given.
pub const BUNDLE_ENV: &str = "PGNOISE_BUNDLE";
pub const BUNDLE_FILE_NAME: &str = "bundle.json";
pub const VALIDATION_FILE_NAME: &str = "validation.csv";

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("no input images in {}", .0.display())]
    NoInputImages(PathBuf),
    #[error("no clean/noisy pairs under {} (expected <scene>/<id>_clean.png with <id>_noisy.png)", .0.display())]
    NoPairs(PathBuf),
    #[error("bundle {source_name}: {source}")]
    Bundle {
        source_name: String,
        #[source]
        source: BundleError,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("calibration failed: {0}")]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error("{} of {} image(s) failed", report.failures.len(), report.failures.len() + report.images.len())]
    GenerationFailed { report: GenerateReport },
    #[error("{} of {} variance check(s) exceeded tolerance {}", report.failures().count(), report.rows.len(), report.tolerance)]
    ValidationFailed { report: ValidationReport },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Io { .. } => 1,
            PipelineError::Image(ImageIoError::Io { .. }) => 1,
            PipelineError::InvalidArgument(_)
            | PipelineError::NoInputImages(_)
            | PipelineError::NoPairs(_)
            | PipelineError::Bundle { .. }
            | PipelineError::Image(_) => 2,
            PipelineError::Calibration(_) => 3,
            PipelineError::ValidationFailed { .. } => 4,
            PipelineError::Generator(_) | PipelineError::GenerationFailed { .. } => 5,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

/// Where a loaded bundle came from, for log lines and sidecars.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BundleSource {
    File(PathBuf),
    Builtin,
}

impl std::fmt::Display for BundleSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BundleSource::File(p) => write!(f, "{}", p.display()),
            BundleSource::Builtin => f.write_str("built-in example bundle"),
        }
    }
}

/// Loads `path`, else the file named by `PGNOISE_BUNDLE`, else the
/// built-in synthetic example.
pub fn load_bundle(path: Option<&Path>) -> Result<(ParamBundle, BundleSource)> {
    let from_env = std::env::var_os(BUNDLE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    match path.map(Path::to_path_buf).or(from_env) {
        Some(p) => {
            let bundle = bundle_io::read_bundle(&p)
                .map_err(|source| PipelineError::Bundle { source_name: p.display().to_string(), source })?;
            Ok((bundle, BundleSource::File(p)))
        }
        None => {
            let bundle = synthetic::example_bundle()
                .map_err(|source| PipelineError::Bundle { source_name: "built-in".into(), source })?;
            Ok((bundle, BundleSource::Builtin))
        }
    }
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if is_image(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn require_dir(dir: &Path, what: &str) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(PipelineError::InvalidArgument(format!("{what} {} is not a directory", dir.display())))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOptions {
    pub img_dir: PathBuf,
    pub out_dir: PathBuf,
    pub n_obs: usize,
    pub seed: u64,
    pub clip: bool,
    pub fixed_params: bool,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    /// Output bit depth; `None` keeps each input's depth.
    pub bit_depth: Option<u8>,
}

impl GenerateOptions {
    pub fn new(img_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, n_obs: usize) -> Self {
        GenerateOptions {
            img_dir: img_dir.into(),
            out_dir: out_dir.into(),
            n_obs,
            seed: 0,
            clip: true,
            fixed_params: false,
            jobs: None,
            bit_depth: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedImage {
    pub source: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub params: Vec<NoiseParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateFailure {
    pub source: PathBuf,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct GenerateReport {
    pub images: Vec<GeneratedImage>,
    pub failures: Vec<GenerateFailure>,
}

/// Seed of one input's stream: the run seed keyed by the file stem.
pub fn image_seed(seed: u64, stem: &str) -> u64 {
    NoiseStream::new(seed).named(stem).key()
}

pub fn output_name(stem: &str, index: usize) -> String {
    format!("{stem}_noisy_{index}.png")
}

fn generate_one(
    source: &Path,
    bundle: &ParamBundle,
    bundle_id: &str,
    options: &GenerateOptions,
) -> std::result::Result<GeneratedImage, String> {
    let stem = source.file_stem().and_then(|s| s.to_str()).ok_or("file name is not valid UTF-8")?;
    let record = image_io::load_image(source).map_err(|e| e.to_string())?;
    let depth = options.bit_depth.unwrap_or(record.bit_depth);
    let seed = image_seed(options.seed, stem);
    let generator = NoiseGenerator::new(bundle, seed)
        .clip(options.clip)
        .fixed_params(options.fixed_params)
        .map_err(|e| e.to_string())?;
    let results = par::map_indices(options.n_obs, |i| {
        let realization = generator.realize(&record.pixels, i).map_err(|e| e.to_string())?;
        let out = options.out_dir.join(output_name(stem, i));
        image_io::save_image(&realization.image, &out, depth).map_err(|e| e.to_string())?;
        let sidecar = Sidecar {
            source_image: source.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            image_seed: seed,
            fixed_params: options.fixed_params,
            clip: options.clip,
            bundle_id: bundle_id.to_string(),
            ..Sidecar::new(realization.params, options.seed, i)
        };
        image_io::write_sidecar(&sidecar, &image_io::sidecar_path(&out)).map_err(|e| e.to_string())?;
        Ok::<_, String>((out, realization.params))
    });
    let (outputs, params) = results.into_iter().collect::<std::result::Result<Vec<_>, _>>()?.into_iter().unzip();
    Ok(GeneratedImage { source: source.to_path_buf(), outputs, params })
}

/// Writes `n_obs` noisy versions (plus JSON sidecars) of every image in
/// `img_dir`. A failing image does not stop the others; if any failed the
/// full report comes back inside [`PipelineError::GenerationFailed`].
pub fn run_generate(bundle: &ParamBundle, options: &GenerateOptions) -> Result<GenerateReport> {
    if options.n_obs == 0 {
        return Err(PipelineError::InvalidArgument("--n_obs must be at least 1".into()));
    }
    if let Some(d) = options.bit_depth.filter(|d| ![8, 16].contains(d)) {
        return Err(ImageIoError::BitDepth(d).into());
    }
    if options.jobs == Some(0) {
        return Err(PipelineError::InvalidArgument("--jobs must be at least 1".into()));
    }
    require_dir(&options.img_dir, "--img_dir")?;
    let inputs = list_images(&options.img_dir)?;
    if inputs.is_empty() {
        return Err(PipelineError::NoInputImages(options.img_dir.clone()));
    }
    create_dir(&options.out_dir)?;
    let bundle_id = bundle_io::bundle_id(bundle);
    let results = par::with_jobs(options.jobs, || {
        par::map_indices(inputs.len(), |k| generate_one(&inputs[k], bundle, &bundle_id, options))
    });
    let mut report = GenerateReport::default();
    for (source, result) in inputs.into_iter().zip(results) {
        match result {
            Ok(img) => {
                log::info!("{}: wrote {} realization(s)", source.display(), img.outputs.len());
                report.images.push(img);
            }
            Err(message) => {
                log::error!("{}: {message}", source.display());
                report.failures.push(GenerateFailure { source, message });
            }
        }
    }
    if report.failures.is_empty() {
        Ok(report)
    } else {
        Err(PipelineError::GenerationFailed { report })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrateOptions {
    pub img_dir: PathBuf,
    pub out_dir: PathBuf,
    pub bin_count: usize,
    pub estimation_bins: usize,
    pub jobs: Option<usize>,
}

impl CalibrateOptions {
    pub fn new(img_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        CalibrateOptions {
            img_dir: img_dir.into(),
            out_dir: out_dir.into(),
            bin_count: DEFAULT_BIN_COUNT,
            estimation_bins: calibration::DEFAULT_ESTIMATION_BINS,
            jobs: None,
        }
    }
}

/// Count, mean, min and max of one histogram. Mean is taken over bin
/// centres; min and max are the outer edges.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramSummary {
    pub count: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl HistogramSummary {
    pub fn of(h: &Histogram) -> Self {
        HistogramSummary { count: h.total_mass(), mean: h.mean(), min: h.lower(), max: h.upper() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibrateReport {
    pub bundle: ParamBundle,
    pub bundle_path: PathBuf,
    pub scenes: Vec<SceneCalibration>,
    pub warnings: Vec<String>,
}

impl CalibrateReport {
    /// `(slope, intercept, a)` summaries per channel.
    pub fn summaries(&self) -> Rgb<[(&'static str, HistogramSummary); 3]> {
        self.bundle.channels().map(|_, h| {
            [
                ("slope", HistogramSummary::of(&h.slope_hist)),
                ("intercept", HistogramSummary::of(&h.intercept_hist)),
                ("a", HistogramSummary::of(&h.a_hist)),
            ]
        })
    }
}

/// `(id, clean, noisy)` for every `<id>_clean.<ext>` in `scene_dir` with a
/// matching `<id>_noisy.<ext>`, sorted by id.
pub fn find_pairs(scene_dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut pairs = Vec::new();
    for clean in list_images(scene_dir)? {
        let (Some(stem), Some(ext)) =
            (clean.file_stem().and_then(|s| s.to_str()), clean.extension().and_then(|s| s.to_str()))
        else {
            continue;
        };
        if let Some(id) = stem.strip_suffix("_clean") {
            let noisy = scene_dir.join(format!("{id}_noisy.{ext}"));
            if noisy.is_file() {
                pairs.push((id.to_string(), clean.clone(), noisy));
            }
        }
    }
    Ok(pairs)
}

fn scene_dirs(img_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(img_dir).map_err(io_err(img_dir))? {
        let path = entry.map_err(io_err(img_dir))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

fn calibrate_dir(dir: &Path, estimation_bins: usize) -> Result<Option<SceneCalibration>> {
    let scene_id = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut warnings = Vec::new();
    let mut pairs = Vec::new();
    for (id, clean, noisy) in find_pairs(dir)? {
        let loaded = image_io::load_image(&clean).and_then(|c| Ok((c, image_io::load_image(&noisy)?)));
        match loaded {
            Ok((c, n)) => match ScenePair::new(c.pixels, n.pixels, scene_id.clone()) {
                Ok(p) => pairs.push(p.with_pair_id(id)),
                Err(e) => warnings.push(format!("{scene_id} pair {id}: {e}")),
            },
            Err(e) => warnings.push(format!("{scene_id} pair {id}: {e}")),
        }
    }
    if pairs.is_empty() {
        if !warnings.is_empty() {
            warnings.iter().for_each(|w| log::warn!("{w}"));
        }
        return Ok(None);
    }
    let mut scene = calibration::calibrate_scene(&scene_id, &pairs, estimation_bins);
    warnings.append(&mut scene.warnings);
    scene.warnings = warnings;
    Ok(Some(scene))
}

/// Estimates `(a, b)` for every pair under `img_dir/<scene>/`, fits a line
/// per scene and channel, and writes the resulting bundle to
/// `out_dir/bundle.json`.
pub fn run_calibrate(options: &CalibrateOptions) -> Result<CalibrateReport> {
    if options.bin_count == 0 {
        return Err(PipelineError::InvalidArgument("--bins must be at least 1".into()));
    }
    if options.estimation_bins < 2 {
        return Err(PipelineError::InvalidArgument("--estimation-bins must be at least 2".into()));
    }
    require_dir(&options.img_dir, "--img_dir")?;
    let dirs = scene_dirs(&options.img_dir)?;
    let results = par::with_jobs(options.jobs, || {
        par::map_indices(dirs.len(), |k| calibrate_dir(&dirs[k], options.estimation_bins))
    });
    let mut scenes = Vec::new();
    for r in results {
        scenes.extend(r?);
    }
    if scenes.is_empty() {
        return Err(PipelineError::NoPairs(options.img_dir.clone()));
    }
    let mut warnings: Vec<String> = scenes.iter().flat_map(|s| s.warnings.iter().cloned()).collect();
    if scenes.len() == 1 {
        warnings.push(format!("only one scene ({}); each slope histogram holds a single value", scenes[0].scene_id));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let pair_count: usize = scenes.iter().map(|s| s.channels[Channel::Red].noise_variances.len()).sum();
    let metadata = BTreeMap::from([
        ("bin_count".to_string(), options.bin_count.to_string()),
        ("estimation_bins".to_string(), options.estimation_bins.to_string()),
        ("pairs".to_string(), pair_count.to_string()),
        ("scenes".to_string(), scenes.len().to_string()),
        ("source".to_string(), "calibrated".to_string()),
    ]);
    let bundle = calibration::build_param_bundle(&scenes, options.bin_count, metadata)?;
    create_dir(&options.out_dir)?;
    let bundle_path = options.out_dir.join(BUNDLE_FILE_NAME);
    bundle_io::write_bundle(&bundle, &bundle_path)
        .map_err(|source| PipelineError::Bundle { source_name: bundle_path.display().to_string(), source })?;
    Ok(CalibrateReport { bundle, bundle_path, scenes, warnings })
}

/// Runs the variance-law check and writes the CSV to `csv_path` when given.
/// A failing check still writes the CSV, then returns
/// [`PipelineError::ValidationFailed`].
pub fn run_validate(
    bundle: &ParamBundle,
    options: &ValidateOptions,
    csv_path: Option<&Path>,
    jobs: Option<usize>,
) -> Result<ValidationReport> {
    if options.param_sets == 0 || options.plane_size < 2 || options.y_grid.is_empty() {
        return Err(PipelineError::InvalidArgument(
            "validation needs at least one parameter set, a plane of at least 2x2 and one intensity".into(),
        ));
    }
    if let Some(&y) = options.y_grid.iter().find(|y| !(0.0..=1.0).contains(*y)) {
        return Err(PipelineError::InvalidArgument(format!("intensity {y} is outside [0, 1]")));
    }
    if !(options.tolerance.is_finite() && options.tolerance > 0.0) {
        return Err(PipelineError::InvalidArgument("tolerance must be positive".into()));
    }
    let report = par::with_jobs(jobs, || validate::validate_bundle(bundle, options))?;
    if let Some(path) = csv_path {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        fs::write(path, report.to_csv()).map_err(io_err(path))?;
    }
    if report.passed() {
        Ok(report)
    } else {
        Err(PipelineError::ValidationFailed { report })
    }
}
