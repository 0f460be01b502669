//! Re-deriving a [`ParamBundle`] from paired clean/noisy images.
//!
//! Per image pair and channel, `(a, b)` is recovered from the variance law:
//! pixels are grouped by clean intensity, the variance of `noisy - clean` is
//! measured per group, and `variance = a * y + b` is fitted by least squares
//! weighted by group size. Per scene, a line `b = m * a + c` is then fitted
//! through that scene's `(a, b)` estimates. The bundle collects, per channel,
//! the scene slopes `m`, the whole-image noise variances (intercept
//! histogram) and the positive `a` estimates.
//!
//! Negative `a` or `b` estimates are kept as-is until the bundle is built;
//! only the `a` histogram drops non-positive values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{BundleInvariantError, ChannelHistograms, ParamBundle};
use crate::histogram::{build_histogram, HistogramError};
use crate::model::{Channel, ImagePlane, ModelError, Rgb, RgbImage};

/// Intensity groups with fewer pixels than this are ignored.
pub const MIN_BIN_POPULATION: usize = 100;

pub const DEFAULT_ESTIMATION_BINS: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("estimation needs at least 2 intensity bins (got {0})")]
    TooFewBins(usize),
    #[error("only {populated} intensity bin(s) hold >= {MIN_BIN_POPULATION} pixels; need 2")]
    InsufficientDynamicRange { populated: usize },
    #[error("clean and noisy planes differ in size ({clean:?} vs {noisy:?})")]
    SizeMismatch { clean: (usize, usize), noisy: (usize, usize) },
    #[error("line fit needs at least 2 estimates (got {0})")]
    TooFewPoints(usize),
    #[error("line fit is degenerate: all a estimates are equal")]
    DegenerateFit,
    #[error("no scenes to calibrate from")]
    NoScenes,
    #[error("{channel}: no scene produced a usable line fit")]
    NoSlopes { channel: Channel },
    #[error("{channel}: no positive a estimate (scenes: {})", scenes.join(", "))]
    NoPositiveA { channel: Channel, scenes: Vec<String> },
    #[error("{channel} {kind} histogram: {source}")]
    Histogram {
        channel: Channel,
        kind: &'static str,
        #[source]
        source: HistogramError,
    },
    #[error(transparent)]
    Bundle(#[from] BundleInvariantError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = CalibrationError> = std::result::Result<T, E>;

/// One `(a, b)` estimate. Either value may be negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbEstimate {
    pub a: f64,
    pub b: f64,
    pub channel: Channel,
    pub scene_id: String,
    /// Which image pair of the scene produced the estimate (may be empty).
    #[serde(default)]
    pub pair_id: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub m: f64,
    pub c: f64,
    pub residual_rms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    clean: RgbImage,
    noisy: RgbImage,
    scene_id: String,
    pair_id: String,
}

impl ScenePair {
    pub fn new(clean: RgbImage, noisy: RgbImage, scene_id: impl Into<String>) -> Result<Self> {
        let (cd, nd) = ((clean.width(), clean.height()), (noisy.width(), noisy.height()));
        if cd != nd {
            return Err(CalibrationError::SizeMismatch { clean: cd, noisy: nd });
        }
        Ok(ScenePair { clean, noisy, scene_id: scene_id.into(), pair_id: String::new() })
    }

    pub fn with_pair_id(mut self, pair_id: impl Into<String>) -> Self {
        self.pair_id = pair_id.into();
        self
    }

    pub fn pair_id(&self) -> &str {
        &self.pair_id
    }

    pub fn clean(&self) -> &RgbImage {
        &self.clean
    }

    pub fn noisy(&self) -> &RgbImage {
        &self.noisy
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }
}

#[derive(Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

/// Weighted least squares `y = slope * x + intercept`; `None` if all x coincide.
fn weighted_line(points: &[(f64, f64, f64)]) -> Option<(f64, f64)> {
    let w: f64 = points.iter().map(|p| p.2).sum();
    let xm = points.iter().map(|p| p.2 * p.0).sum::<f64>() / w;
    let ym = points.iter().map(|p| p.2 * p.1).sum::<f64>() / w;
    let sxx: f64 = points.iter().map(|p| p.2 * (p.0 - xm) * (p.0 - xm)).sum();
    let sxy: f64 = points.iter().map(|p| p.2 * (p.0 - xm) * (p.1 - ym)).sum();
    if sxx <= 0.0 || !sxx.is_finite() {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, ym - slope * xm))
}

/// `(a, b)` from one clean/noisy plane pair; see the module docs.
pub fn estimate_ab_planes(clean: &ImagePlane, noisy: &ImagePlane, bin_count: usize) -> Result<(f64, f64)> {
    if bin_count < 2 {
        return Err(CalibrationError::TooFewBins(bin_count));
    }
    let (cd, nd) = ((clean.width(), clean.height()), (noisy.width(), noisy.height()));
    if cd != nd {
        return Err(CalibrationError::SizeMismatch { clean: cd, noisy: nd });
    }
    clean.check_unit_range("clean")?;

    let mut intensity = vec![Welford::default(); bin_count];
    let mut residual = vec![Welford::default(); bin_count];
    for (&y, &z) in clean.samples().iter().zip(noisy.samples()) {
        let bin = ((y * bin_count as f64) as usize).min(bin_count - 1);
        intensity[bin].push(y);
        residual[bin].push(z - y);
    }

    let points: Vec<(f64, f64, f64)> = intensity
        .iter()
        .zip(&residual)
        .filter(|(i, _)| i.n >= MIN_BIN_POPULATION)
        .map(|(i, r)| (i.mean, r.variance(), i.n as f64))
        .collect();
    if points.len() < 2 {
        return Err(CalibrationError::InsufficientDynamicRange { populated: points.len() });
    }
    weighted_line(&points).ok_or(CalibrationError::InsufficientDynamicRange { populated: 1 })
}

pub fn estimate_ab_paired(pair: &ScenePair, channel: Channel, bin_count: usize) -> Result<AbEstimate> {
    let (a, b) = estimate_ab_planes(pair.clean.plane(channel), pair.noisy.plane(channel), bin_count)?;
    Ok(AbEstimate { a, b, channel, scene_id: pair.scene_id.clone(), pair_id: pair.pair_id.clone() })
}

/// Sample variance of `noisy - clean` over a whole plane.
pub fn plane_noise_variance(clean: &ImagePlane, noisy: &ImagePlane) -> f64 {
    let mut w = Welford::default();
    for (&y, &z) in clean.samples().iter().zip(noisy.samples()) {
        w.push(z - y);
    }
    w.variance()
}

pub fn estimate_noise_variance(pair: &ScenePair, channel: Channel) -> f64 {
    plane_noise_variance(pair.clean.plane(channel), pair.noisy.plane(channel))
}

/// Ordinary least squares of `b` on `a`.
///
/// Points are sorted before fitting, so the result does not depend on input
/// order (not even in the last bit).
pub fn fit_points(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(CalibrationError::TooFewPoints(points.len()));
    }
    let mut sorted: Vec<(f64, f64, f64)> = points.iter().map(|&(a, b)| (a, b, 1.0)).collect();
    sorted.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    let (m, c) = weighted_line(&sorted).ok_or(CalibrationError::DegenerateFit)?;
    let ss: f64 = sorted.iter().map(|&(a, b, _)| (b - (m * a + c)).powi(2)).sum();
    Ok(LineFit { m, c, residual_rms: (ss / sorted.len() as f64).sqrt() })
}

pub fn fit_line(estimates: &[AbEstimate]) -> Result<LineFit> {
    let points: Vec<(f64, f64)> = estimates.iter().map(|e| (e.a, e.b)).collect();
    fit_points(&points)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelCalibration {
    pub estimates: Vec<AbEstimate>,
    /// Whole-image noise variance of each pair.
    pub noise_variances: Vec<f64>,
    /// `None` when the scene's estimates could not define a line.
    pub line: Option<LineFit>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneCalibration {
    pub scene_id: String,
    pub channels: Rgb<ChannelCalibration>,
    /// Human-readable notes on pairs or fits that were skipped.
    pub warnings: Vec<String>,
}

/// Estimates every pair of one scene and fits the per-channel lines.
pub fn calibrate_scene(scene_id: &str, pairs: &[ScenePair], estimation_bins: usize) -> SceneCalibration {
    let mut warnings = Vec::new();
    let channels = Rgb::from_fn(|c| {
        let mut cal = ChannelCalibration::default();
        for (i, pair) in pairs.iter().enumerate() {
            match estimate_ab_paired(pair, c, estimation_bins) {
                Ok(e) => {
                    cal.estimates.push(AbEstimate { scene_id: scene_id.to_string(), ..e });
                    cal.noise_variances.push(estimate_noise_variance(pair, c));
                }
                Err(e) => warnings.push(format!("{scene_id} pair {i} {c}: {e}")),
            }
        }
        match fit_line(&cal.estimates) {
            Ok(fit) => cal.line = Some(fit),
            Err(e) => warnings.push(format!("{scene_id} {c}: no line fit ({e})")),
        }
        cal
    });
    SceneCalibration { scene_id: scene_id.to_string(), channels, warnings }
}

/// Assembles the nine histograms from per-scene calibrations.
pub fn build_param_bundle(
    scenes: &[SceneCalibration],
    bin_count: usize,
    metadata: BTreeMap<String, String>,
) -> Result<ParamBundle> {
    if scenes.is_empty() {
        return Err(CalibrationError::NoScenes);
    }
    let hist = |channel, kind, values: &[f64]| {
        build_histogram(values, bin_count).map_err(|source| CalibrationError::Histogram { channel, kind, source })
    };
    let channels = Rgb::try_from_fn(|c| {
        let slopes: Vec<f64> = scenes.iter().filter_map(|s| s.channels[c].line.map(|l| l.m)).collect();
        let intercepts: Vec<f64> = scenes.iter().flat_map(|s| s.channels[c].noise_variances.iter().copied()).collect();
        let positive_a: Vec<f64> =
            scenes.iter().flat_map(|s| s.channels[c].estimates.iter().map(|e| e.a)).filter(|&a| a > 0.0).collect();
        if intercepts.is_empty() {
            return Err(CalibrationError::NoScenes);
        }
        if slopes.is_empty() {
            return Err(CalibrationError::NoSlopes { channel: c });
        }
        if positive_a.is_empty() {
            let scenes = scenes.iter().map(|s| s.scene_id.clone()).collect();
            return Err(CalibrationError::NoPositiveA { channel: c, scenes });
        }
        Ok(ChannelHistograms {
            slope_hist: hist(c, "slope", &slopes)?,
            intercept_hist: hist(c, "intercept", &intercepts)?,
            a_hist: hist(c, "a", &positive_a)?,
        })
    })?;
    Ok(ParamBundle::new(channels, metadata)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{add_noise_plane, ChannelParams};
    use crate::rng::NoiseStream;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn ramp(width: usize, height: usize) -> ImagePlane {
        ImagePlane::from_fn(width, height, |x, _| x as f64 / (width - 1) as f64).unwrap()
    }

    fn noisy(clean: &ImagePlane, a: f64, b: f64, seed: u64) -> ImagePlane {
        add_noise_plane(clean, ChannelParams::new(a, b).unwrap(), NoiseStream::new(seed), false).unwrap()
    }

    fn est(a: f64, b: f64) -> AbEstimate {
        AbEstimate { a, b, channel: Channel::Red, scene_id: "s".into(), pair_id: String::new() }
    }

    #[test]
    fn zero_noise_estimates_zero() {
        let clean = ramp(256, 64);
        let (a, b) = estimate_ab_planes(&clean, &clean, 16).unwrap();
        assert!(a.abs() <= 1e-8 && b.abs() <= 1e-8);
    }

    #[test]
    fn pure_gaussian_round_trip() {
        let clean = ramp(512, 512);
        let (a, b) = estimate_ab_planes(&clean, &noisy(&clean, 0.0, 0.001, 1), 16).unwrap();
        assert!(a.abs() <= 0.0001, "a = {a}");
        assert!((b / 0.001 - 1.0).abs() <= 0.05, "b = {b}");
    }

    #[test]
    fn b_recovered_on_512_ramp() {
        let clean = ramp(512, 512);
        let (_, b) = estimate_ab_planes(&clean, &noisy(&clean, 0.0002, 0.0030, 2), 16).unwrap();
        assert!((b / 0.0030 - 1.0).abs() <= 0.05, "b = {b}");
    }

    /// At 512x512 the slope's standard error is ~3.0e-5, about 15% of
    /// a = 2e-4, so a 10% bound on `a` holds for only ~half of all seeds.
    #[test]
    #[ignore = "a within 10% needs ~9M pixels at b = 3e-3; see ramp_round_trip_large"]
    fn ramp_round_trip_512() {
        let clean = ramp(512, 512);
        let (a, b) = estimate_ab_planes(&clean, &noisy(&clean, 0.0002, 0.0030, 3), 16).unwrap();
        assert!((a / 0.0002 - 1.0).abs() <= 0.10, "a = {a}");
        assert!((b / 0.0030 - 1.0).abs() <= 0.05, "b = {b}");
    }

    #[test]
    fn ramp_round_trip_large() {
        // 3072^2 brings the slope's standard error to ~2.5% of a.
        let clean = ramp(3072, 3072);
        let (a, b) = estimate_ab_planes(&clean, &noisy(&clean, 0.0002, 0.0030, 3), 16).unwrap();
        assert!((a / 0.0002 - 1.0).abs() <= 0.10, "a = {a}");
        assert!((b / 0.0030 - 1.0).abs() <= 0.05, "b = {b}");
    }

    #[test]
    fn insufficient_dynamic_range() {
        let clean = ImagePlane::constant(100, 100, 0.5).unwrap();
        let err = estimate_ab_planes(&clean, &clean, 16).unwrap_err();
        assert_eq!(err, CalibrationError::InsufficientDynamicRange { populated: 1 });
        assert_eq!(estimate_ab_planes(&clean, &clean, 1).unwrap_err(), CalibrationError::TooFewBins(1));
    }

    #[test]
    fn noise_variance_examples() {
        let clean = ImagePlane::constant(1000, 1000, 0.5).unwrap();
        assert_eq!(plane_noise_variance(&clean, &clean), 0.0);
        let v = plane_noise_variance(&clean, &noisy(&clean, 0.0002, 0.0030, 4));
        assert!((v / 0.0031 - 1.0).abs() <= 0.02, "{v}");
        let v = plane_noise_variance(&clean, &noisy(&clean, 0.0, 0.0004, 5));
        assert!((v / 0.0004 - 1.0).abs() <= 0.03, "{v}");
    }

    #[test]
    fn clipping_shrinks_measured_variance() {
        let clean = ImagePlane::constant(500, 500, 0.9).unwrap();
        let p = ChannelParams::new(0.0, 0.01).unwrap();
        let open = add_noise_plane(&clean, p, NoiseStream::new(6), false).unwrap();
        let clipped = add_noise_plane(&clean, p, NoiseStream::new(6), true).unwrap();
        let (vo, vc) = (plane_noise_variance(&clean, &open), plane_noise_variance(&clean, &clipped));
        assert!(vc < 0.9 * vo, "clipped {vc} vs open {vo}");
    }

    #[test]
    fn fit_line_examples() {
        let f = fit_line(&[est(0.0, 1.0), est(1.0, 3.0)]).unwrap();
        assert_eq!((f.m, f.c, f.residual_rms), (2.0, 1.0, 0.0));
        let f = fit_line(&[est(0.0, 0.0), est(1.0, 1.0), est(2.0, 2.0)]).unwrap();
        assert_eq!((f.m, f.c, f.residual_rms), (1.0, 0.0, 0.0));
        assert_eq!(fit_line(&[est(1.0, 1.0), est(1.0, 2.0)]).unwrap_err(), CalibrationError::DegenerateFit);
        assert_eq!(fit_line(&[est(1.0, 1.0)]).unwrap_err(), CalibrationError::TooFewPoints(1));
    }

    /// OLS slope lies within 3 standard errors of the truth; checked for
    /// coverage over many jitter seeds rather than one lucky draw.
    #[test]
    fn fit_line_sampling_distribution() {
        let sigma = 1e-4;
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 2e-5).collect();
        let xm = xs.iter().sum::<f64>() / 50.0;
        let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
        let se = sigma / sxx.sqrt();
        let trials = 400;
        let mut inside = 0;
        for seed in 0..trials {
            let mut rng = NoiseStream::new(seed).rng();
            let pts: Vec<AbEstimate> =
                xs.iter().map(|&a| est(a, 3.0 * a + 0.002 + sigma * rng.sample::<f64, _>(StandardNormal))).collect();
            let f = fit_line(&pts).unwrap();
            if (f.m - 3.0).abs() <= 3.0 * se {
                inside += 1;
            }
        }
        // nominal coverage 99.73%
        assert!(inside as f64 / trials as f64 >= 0.98, "{inside}/{trials}");
    }

    fn scene(id: &str, pts: &[(f64, f64)], variances: &[f64]) -> SceneCalibration {
        let cal = ChannelCalibration {
            estimates: pts
                .iter()
                .map(|&(a, b)| AbEstimate { a, b, channel: Channel::Red, scene_id: id.into(), pair_id: String::new() })
                .collect(),
            noise_variances: variances.to_vec(),
            line: fit_points(pts).ok(),
        };
        SceneCalibration { scene_id: id.into(), channels: Rgb::from_fn(|_| cal.clone()), warnings: vec![] }
    }

    #[test]
    fn negative_a_excluded_but_scene_still_counts() {
        let s1 = scene("s1", &[(-1e-4, 1e-3), (-2e-4, 2e-3)], &[1e-3, 2e-3]);
        let s2 = scene("s2", &[(1e-4, 1e-3), (3e-4, 2e-3)], &[1.5e-3, 2.5e-3]);
        let bundle = build_param_bundle(&[s1, s2], 8, BTreeMap::new()).unwrap();
        for (_, h) in bundle.channels().iter() {
            assert!(h.a_hist.lower() > 0.0);
            assert_eq!(h.a_hist.total_mass(), 2.0);
            assert_eq!(h.slope_hist.total_mass(), 2.0);
            assert_eq!(h.intercept_hist.total_mass(), 4.0);
        }
    }

    #[test]
    fn all_negative_a_fails_naming_scene() {
        let s = scene("kitchen", &[(-1e-4, 1e-3), (-2e-4, 2e-3)], &[1e-3]);
        match build_param_bundle(&[s], 8, BTreeMap::new()).unwrap_err() {
            CalibrationError::NoPositiveA { channel, scenes } => {
                assert_eq!(channel, Channel::Red);
                assert_eq!(scenes, vec!["kitchen".to_string()]);
            }
            e => panic!("unexpected {e}"),
        }
        assert_eq!(build_param_bundle(&[], 8, BTreeMap::new()).unwrap_err(), CalibrationError::NoScenes);
    }

    #[test]
    fn single_estimate_bundle_reproduces_values() {
        let cal = ChannelCalibration {
            estimates: vec![est(2e-4, 3e-3)],
            noise_variances: vec![3.1e-3],
            line: Some(LineFit { m: 0.5, c: 1e-3, residual_rms: 0.0 }),
        };
        let s = SceneCalibration { scene_id: "only".into(), channels: Rgb::from_fn(|_| cal.clone()), warnings: vec![] };
        let bundle = build_param_bundle(&[s], 64, BTreeMap::new()).unwrap();
        let mut rng = NoiseStream::new(1).rng();
        for (_, h) in bundle.channels().iter() {
            assert_eq!(h.slope_hist.bin_count(), 1);
            let (m, c, a) =
                (h.slope_hist.sample(&mut rng), h.intercept_hist.sample(&mut rng), h.a_hist.sample(&mut rng));
            assert!((m - 0.5).abs() <= 0.5e-6);
            assert!((c - 3.1e-3).abs() <= 3.1e-9);
            assert!((a - 2e-4).abs() <= 2e-10);
        }
    }

    #[test]
    fn calibrate_scene_fits_lines() {
        let clean = RgbImage::new(ramp(256, 256), ramp(256, 256), ramp(256, 256)).unwrap();
        let pairs: Vec<ScenePair> = [1e-3, 2e-3, 3e-3]
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let p = ChannelParams::new(a, 0.5 * a + 1e-4).unwrap();
                let params = Rgb::from_fn(|_| p);
                let noisy = crate::model::add_noise_rgb(&clean, &params, NoiseStream::new(i as u64), false).unwrap();
                ScenePair::new(clean.clone(), noisy, "scene").unwrap()
            })
            .collect();
        let cal = calibrate_scene("scene", &pairs, 16);
        assert!(cal.warnings.is_empty(), "{:?}", cal.warnings);
        for (_, ch) in cal.channels.iter() {
            assert_eq!(ch.estimates.len(), 3);
            let line = ch.line.unwrap();
            assert!((line.m - 0.5).abs() < 0.2, "m = {}", line.m);
        }
    }

    proptest! {
        #[test]
        fn fit_is_order_invariant(mut pts in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 2..40), seed in any::<u64>()) {
            prop_assume!(pts.iter().any(|p| p.0 != pts[0].0));
            let f1 = fit_points(&pts).unwrap();
            let mut rng = NoiseStream::new(seed).rng();
            for i in (1..pts.len()).rev() {
                pts.swap(i, rng.random_range(0..=i));
            }
            prop_assert_eq!(f1, fit_points(&pts).unwrap());
        }

        #[test]
        fn collinear_points_have_tiny_residual(m in -10.0..10.0f64, c in -1.0..1.0f64, xs in proptest::collection::btree_set(-1000i32..1000, 2..30)) {
            let pts: Vec<(f64, f64)> = xs.iter().map(|&x| { let x = f64::from(x) / 8.0; (x, m * x + c) }).collect();
            let f = fit_points(&pts).unwrap();
            prop_assert!(f.residual_rms <= 1e-12 * (1.0 + m.abs() * 125.0));
            prop_assert!((f.m - m).abs() <= 1e-9);
        }
    }
}
