//! The noise generator proper.
//!
//! A [`ParamBundle`] holds, per channel, three histograms: line slopes `m`,
//! line intercepts `c` (signal-free noise variances) and positive shot-noise
//! gains `a`. One channel's parameters are drawn as
//!
//! 1. `m' ~ slope_hist`, `c' ~ intercept_hist`, `a' ~ a_hist`
//! 2. `b' = m' * a' + c'`
//! 3. if `b' < 0` (or `a'` is not positive) start over from step 1
//!
//! so accepted pairs follow the product distribution conditioned on
//! `b' >= 0`. The loop is capped at `max_attempts`.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::histogram::Histogram;
use crate::model::{self, Channel, ChannelParams, ModelError, NoiseParams, Rgb, RgbImage};
use crate::par;
use crate::rng::NoiseStream;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 1000;

/// Substream tag for parameter draws within a realization.
const PARAMS_TAG: u64 = 0;
/// Substream tag for pixel noise within a realization.
const NOISE_TAG: u64 = 1;
/// Substream used for the single draw in fixed-params mode.
const FIXED_PARAMS_TAG: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}: {reason}")]
pub struct BundleInvariantError {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeneratorError {
    #[error("{channel}: no draw with b >= 0 and a > 0 after {attempts} attempts")]
    SamplingExhausted { channel: Channel, attempts: u32 },
    #[error("max_attempts must be at least 1")]
    ZeroAttempts,
    #[error("realization count must be at least 1")]
    ZeroRealizations,
    #[error("realization {index}: {source}")]
    Realization {
        index: usize,
        #[source]
        source: Box<GeneratorError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = GeneratorError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelHistograms {
    pub slope_hist: Histogram,
    pub intercept_hist: Histogram,
    pub a_hist: Histogram,
}

/// Nine histograms (slope, intercept, positive `a`) x (R, G, B).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamBundle {
    channels: Rgb<ChannelHistograms>,
    metadata: BTreeMap<String, String>,
}

impl ParamBundle {
    pub fn new(
        channels: Rgb<ChannelHistograms>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self, BundleInvariantError> {
        for (c, hists) in channels.iter() {
            check_a_support(c, &hists.a_hist)?;
        }
        Ok(ParamBundle { channels, metadata })
    }

    /// A bundle whose every draw is exactly `params`. Each histogram is a
    /// one-ulp bin `[v, next_up(v))`, which always samples to `v`; slopes are 0.
    pub fn point_mass(params: &NoiseParams) -> Result<Self, BundleInvariantError> {
        let channels = Rgb::try_from_fn(|c| {
            let p = params[c];
            let path = |field: &str| format!("channels.{c}.{field}");
            let bad = |field: &str, reason: String| BundleInvariantError { path: path(field), reason };
            Ok(ChannelHistograms {
                slope_hist: atom(0.0).map_err(|e| bad("slope_hist", e))?,
                intercept_hist: atom(p.b).map_err(|e| bad("intercept_hist", e))?,
                a_hist: atom(p.a).map_err(|e| bad("a_hist", e))?,
            })
        })?;
        Self::new(channels, BTreeMap::new())
    }

    /// Point-mass bundle that leaves quantized images unchanged: `b = 0` and
    /// `a` equal to the smallest positive double (whose shot noise is far
    /// below one ulp of any non-zero 16-bit code value).
    pub fn zero_noise() -> Self {
        let tiny = ChannelParams { a: f64::from_bits(1), b: 0.0 };
        Self::point_mass(&Rgb::from_fn(|_| tiny)).expect("smallest positive a is valid")
    }

    pub fn channels(&self) -> &Rgb<ChannelHistograms> {
        &self.channels
    }

    pub fn channel(&self, c: Channel) -> &ChannelHistograms {
        &self.channels[c]
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

fn atom(v: f64) -> Result<Histogram, String> {
    Histogram::new(vec![v, v.next_up()], vec![1.0]).map_err(|e| e.to_string())
}

fn check_a_support(c: Channel, a_hist: &Histogram) -> Result<(), BundleInvariantError> {
    let path = format!("channels.{c}.a_hist");
    if a_hist.lower() < 0.0 {
        return Err(BundleInvariantError {
            path,
            reason: format!("support must be non-negative, first edge is {}", a_hist.lower()),
        });
    }
    // With a non-negative first edge every upper edge is > 0; kept for clarity.
    if let Some(i) = (0..a_hist.bin_count()).find(|&i| a_hist.mass()[i] > 0.0 && a_hist.edges()[i + 1] <= 0.0) {
        return Err(BundleInvariantError { path, reason: format!("bin {i} has mass but upper edge <= 0") });
    }
    Ok(())
}

/// One accepted draw together with the triple that produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamDraw {
    pub params: ChannelParams,
    pub slope: f64,
    pub intercept: f64,
    /// Number of triples drawn, including the accepted one.
    pub attempts: u32,
}

pub fn sample_channel_params_traced<R: Rng + ?Sized>(
    bundle: &ParamBundle,
    channel: Channel,
    rng: &mut R,
    max_attempts: u32,
) -> Result<ParamDraw> {
    if max_attempts == 0 {
        return Err(GeneratorError::ZeroAttempts);
    }
    let h = bundle.channel(channel);
    for attempt in 1..=max_attempts {
        let slope = h.slope_hist.sample(rng);
        let intercept = h.intercept_hist.sample(rng);
        let a = h.a_hist.sample(rng);
        let b = slope * a + intercept;
        if a > 0.0 && b >= 0.0 && b.is_finite() {
            return Ok(ParamDraw {
                // +0.0 normalizes a -0.0 result
                params: ChannelParams { a, b: b + 0.0 },
                slope,
                intercept,
                attempts: attempt,
            });
        }
    }
    Err(GeneratorError::SamplingExhausted { channel, attempts: max_attempts })
}

pub fn sample_channel_params<R: Rng + ?Sized>(
    bundle: &ParamBundle,
    channel: Channel,
    rng: &mut R,
    max_attempts: u32,
) -> Result<ChannelParams> {
    sample_channel_params_traced(bundle, channel, rng, max_attempts).map(|d| d.params)
}

/// Channel `c` draws from `stream.substream(c.index())`.
pub fn sample_noise_params(bundle: &ParamBundle, stream: NoiseStream) -> Result<NoiseParams> {
    sample_noise_params_with(bundle, stream, DEFAULT_MAX_ATTEMPTS)
}

pub fn sample_noise_params_with(bundle: &ParamBundle, stream: NoiseStream, max_attempts: u32) -> Result<NoiseParams> {
    Rgb::try_from_fn(|c| {
        let mut rng = stream.substream(c.index() as u64).rng();
        sample_channel_params(bundle, c, &mut rng, max_attempts)
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub index: usize,
    pub image: RgbImage,
    pub params: NoiseParams,
}

/// Produces realizations of one clean image. Realization `i` is a pure
/// function of `(seed, i)`, so any subset can be computed in any order.
#[derive(Clone, Debug)]
pub struct NoiseGenerator<'a> {
    bundle: &'a ParamBundle,
    stream: NoiseStream,
    clip: bool,
    fixed: Option<NoiseParams>,
    max_attempts: u32,
}

impl<'a> NoiseGenerator<'a> {
    pub fn new(bundle: &'a ParamBundle, seed: u64) -> Self {
        NoiseGenerator {
            bundle,
            stream: NoiseStream::new(seed),
            clip: true,
            fixed: None,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn clip(mut self, clip: bool) -> Self {
        self.clip = clip;
        self
    }

    pub fn max_attempts(mut self, max_attempts: u32) -> Self {
        self.max_attempts = max_attempts;
        self
    }

    /// Draw one parameter set up front and reuse it for every realization.
    pub fn fixed_params(mut self, fixed: bool) -> Result<Self> {
        self.fixed = if fixed {
            Some(sample_noise_params_with(self.bundle, self.stream.substream(FIXED_PARAMS_TAG), self.max_attempts)?)
        } else {
            None
        };
        Ok(self)
    }

    pub fn params_for(&self, index: usize) -> Result<NoiseParams> {
        match self.fixed {
            Some(p) => Ok(p),
            None => sample_noise_params_with(
                self.bundle,
                self.stream.substream(index as u64).substream(PARAMS_TAG),
                self.max_attempts,
            ),
        }
    }

    pub fn realize(&self, clean: &RgbImage, index: usize) -> Result<Realization> {
        let wrap = |e: GeneratorError| GeneratorError::Realization { index, source: Box::new(e) };
        let params = self.params_for(index).map_err(wrap)?;
        let noise_stream = self.stream.substream(index as u64).substream(NOISE_TAG);
        let image = model::add_noise_rgb(clean, &params, noise_stream, self.clip).map_err(|e| wrap(e.into()))?;
        Ok(Realization { index, image, params })
    }
}

/// `n` independent noisy versions of `clean`, each with freshly sampled
/// parameters.
pub fn generate_noisy_images(
    clean: &RgbImage,
    bundle: &ParamBundle,
    n: usize,
    seed: u64,
    clip: bool,
) -> Result<Vec<Realization>> {
    if n == 0 {
        return Err(GeneratorError::ZeroRealizations);
    }
    let generator = NoiseGenerator::new(bundle, seed).clip(clip);
    par::map_indices(n, |i| generator.realize(clean, i)).into_iter().collect()
}
