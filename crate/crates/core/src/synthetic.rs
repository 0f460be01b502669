//! Synthetic data: the shipped example bundle and calibration corpora with
//! known ground truth.
//!
//! The example bundle is *not* derived from real camera captures. Its nine
//! histograms are binned from seeded draws (normal slopes, gamma-shaped
//! intercepts and gains) chosen to have plausible smartphone sRGB
//! magnitudes: `a ~ 1e-4`, `b ~ 1e-3`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use crate::bundle_io::{parse_bundle, BundleError};
use crate::generator::{ChannelHistograms, ParamBundle};
use crate::histogram::{build_histogram, DEFAULT_BIN_COUNT};
use crate::image_io::{self, ImageIoError};
use crate::model::{self, Channel, ChannelParams, ImagePlane, NoiseParams, Rgb, RgbImage};
use crate::rng::NoiseStream;

pub const EXAMPLE_SEED: u64 = 0x5eed_2022;
pub const EXAMPLE_VALUES_PER_HISTOGRAM: usize = 100_000;

const EXAMPLE_BUNDLE_JSON: &str = include_str!("../fixtures/example_bundle.json");

/// Raw values behind one channel's three example histograms.
#[derive(Clone, Debug)]
pub struct SourceValues {
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub a_values: Vec<f64>,
}

struct ChannelShape {
    slope_mean: f64,
    slope_sd: f64,
    intercept_shape: f64,
    intercept_scale: f64,
    a_shape: f64,
    a_scale: f64,
}

fn shape(c: Channel) -> ChannelShape {
    match c {
        Channel::Red => ChannelShape {
            slope_mean: -2.0,
            slope_sd: 5.0,
            intercept_shape: 3.0,
            intercept_scale: 5e-4,
            a_shape: 2.5,
            a_scale: 6e-5,
        },
        Channel::Green => ChannelShape {
            slope_mean: -1.0,
            slope_sd: 3.0,
            intercept_shape: 3.0,
            intercept_scale: 1.5e-4,
            a_shape: 2.5,
            a_scale: 4e-5,
        },
        Channel::Blue => ChannelShape {
            slope_mean: -1.5,
            slope_sd: 4.0,
            intercept_shape: 3.0,
            intercept_scale: 3e-4,
            a_shape: 2.5,
            a_scale: 4e-5,
        },
    }
}

fn draws<D: Distribution<f64>>(dist: D, stream: NoiseStream, n: usize) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n).map(|_| dist.sample(&mut rng)).collect()
}

/// The seeded source values of the example bundle, `n` per histogram.
pub fn example_sources(n: usize) -> Rgb<SourceValues> {
    let root = NoiseStream::new(EXAMPLE_SEED);
    Rgb::from_fn(|c| {
        let s = shape(c);
        let stream = root.substream(c.index() as u64);
        SourceValues {
            slopes: draws(Normal::new(s.slope_mean, s.slope_sd).expect("valid normal"), stream.substream(0), n),
            intercepts: draws(
                Gamma::new(s.intercept_shape, s.intercept_scale).expect("valid gamma"),
                stream.substream(1),
                n,
            ),
            a_values: draws(Gamma::new(s.a_shape, s.a_scale).expect("valid gamma"), stream.substream(2), n),
        }
    })
}

/// Rebuilds the example bundle from its seeded sources.
pub fn build_example_bundle() -> ParamBundle {
    let sources = example_sources(EXAMPLE_VALUES_PER_HISTOGRAM);
    let channels = sources.map(|_, s| ChannelHistograms {
        slope_hist: build_histogram(&s.slopes, DEFAULT_BIN_COUNT).expect("finite values"),
        intercept_hist: build_histogram(&s.intercepts, DEFAULT_BIN_COUNT).expect("finite values"),
        a_hist: build_histogram(&s.a_values, DEFAULT_BIN_COUNT).expect("finite values"),
    });
    let metadata = BTreeMap::from([
        ("bin_count".to_string(), DEFAULT_BIN_COUNT.to_string()),
        (
            "description".to_string(),
            "synthetic example: seeded normal slopes and gamma-shaped intercepts and gains; not measured from camera data".to_string(),
        ),
        ("seed".to_string(), EXAMPLE_SEED.to_string()),
        ("values_per_histogram".to_string(), EXAMPLE_VALUES_PER_HISTOGRAM.to_string()),
    ]);
    ParamBundle::new(channels, metadata).expect("gamma draws are positive")
}

/// The example bundle as shipped in `fixtures/example_bundle.json`.
pub fn example_bundle() -> Result<ParamBundle, BundleError> {
    parse_bundle(EXAMPLE_BUNDLE_JSON.as_bytes())
}

pub fn example_bundle_bytes() -> &'static [u8] {
    EXAMPLE_BUNDLE_JSON.as_bytes()
}

/// Horizontal ramp from `lo` (left) to `hi` (right); green runs right to left.
pub fn ramp_image(width: usize, height: usize, lo: f64, hi: f64) -> RgbImage {
    let denom = (width.max(2) - 1) as f64;
    let fwd = ImagePlane::from_fn(width, height, |x, _| lo + (hi - lo) * x as f64 / denom).expect("non-empty");
    let rev = ImagePlane::from_fn(width, height, |x, _| hi - (hi - lo) * x as f64 / denom).expect("non-empty");
    RgbImage::new(fwd.clone(), rev, fwd).expect("same size")
}

/// Ground truth for one synthetic scene: one parameter set per image pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub scene_id: String,
    pub pairs: Vec<NoiseParams>,
}

/// Scenes whose per-channel `(a, b)` lie on a line `b = m a + c`, like a
/// sensor swept through several gains. `m ~ U[0.2, 0.6]`,
/// `c ~ U[3e-4, 8e-4]`, and the pairs use `a` near `6e-4, 1e-3, 1.5e-3, ...`.
pub fn line_scenes(count: usize, pairs_per_scene: usize, seed: u64) -> Vec<SceneSpec> {
    const BASE_A: [f64; 4] = [6e-4, 1e-3, 1.5e-3, 8e-4];
    let root = NoiseStream::new(seed);
    (0..count)
        .map(|s| {
            let mut rng = root.substream(s as u64).rng();
            let lines: Rgb<(f64, f64)> = Rgb::from_fn(|_| (rng.random_range(0.2..0.6), rng.random_range(3e-4..8e-4)));
            let pairs = (0..pairs_per_scene)
                .map(|i| {
                    Rgb::from_fn(|c| {
                        let a = BASE_A[i % BASE_A.len()] * rng.random_range(0.9..1.1);
                        let (m, intercept) = lines[c];
                        ChannelParams { a, b: m * a + intercept }
                    })
                })
                .collect();
            SceneSpec { scene_id: format!("scene{s:02}"), pairs }
        })
        .collect()
}

/// Quantizes every sample to the given bit depth.
pub fn quantized(img: &RgbImage, bit_depth: u8) -> Result<RgbImage, ImageIoError> {
    let planes = Rgb::try_from_fn(|c| {
        let p = img.plane(c);
        let samples = p
            .samples()
            .iter()
            .map(|&v| image_io::dequantize(image_io::quantize(v, bit_depth)?, bit_depth))
            .collect::<Result<Vec<_>, _>>()?;
        Ok::<_, ImageIoError>(ImagePlane::new(p.width(), p.height(), samples)?)
    })?;
    Ok(RgbImage::from_planes(planes)?)
}

/// Writes `<dir>/<scene>/p<i>_clean.png` and `p<i>_noisy.png` (16-bit) for
/// every pair. Noise is added without clipping; a sample leaving `[0, 1]`
/// makes the write fail rather than be clamped. Returns the scene dirs.
pub fn write_corpus(
    dir: &Path,
    scenes: &[SceneSpec],
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Vec<PathBuf>, ImageIoError> {
    let clean = quantized(&ramp_image(width, height, 0.3, 0.7), 16)?;
    let root = NoiseStream::new(seed);
    let mut dirs = Vec::new();
    for scene in scenes {
        let scene_dir = dir.join(&scene.scene_id);
        fs::create_dir_all(&scene_dir).map_err(|source| ImageIoError::Io { path: scene_dir.clone(), source })?;
        for (i, params) in scene.pairs.iter().enumerate() {
            let stream = root.named(&scene.scene_id).substream(i as u64);
            let noisy = model::add_noise_rgb(&clean, params, stream, false)?;
            image_io::save_image(&clean, &scene_dir.join(format!("p{i}_clean.png")), 16)?;
            image_io::save_image(&noisy, &scene_dir.join(format!("p{i}_noisy.png")), 16)?;
        }
        dirs.push(scene_dir);
    }
    Ok(dirs)
}
