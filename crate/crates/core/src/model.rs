//! The Poissonian-Gaussian observation model.
//!
//! A clean intensity `y` in `[0, 1]` is observed as
//!
//! ```text
//! z = a * P(y / a) + N(0, b)        var(z) = a * y + b
//! ```
//!
//! where `P` is a Poisson count and `N` a zero-mean normal with variance `b`.
//! `a = 0` is accepted and means "no shot noise" (`z = y + N(0, b)`).
//!
//! Values are decoded sRGB code values scaled to `[0, 1]`; there is no gamma
//! linearization anywhere in the pipeline.

use std::fmt;
use std::ops::Index;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::poisson::{self, GAUSSIAN_THRESHOLD};
use crate::rng::NoiseStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid {what}: {value}")]
    InvalidInput { what: &'static str, value: f64 },
    #[error("plane has {len} samples but is {width}x{height}")]
    ShapeMismatch { width: usize, height: usize, len: usize },
    #[error("plane dimensions must be non-zero (got {width}x{height})")]
    EmptyPlane { width: usize, height: usize },
    #[error("channel planes differ in size: {0}")]
    ChannelSizeMismatch(String),
    #[error("{channel} plane sample {index} = {value} is outside [0, 1]")]
    SampleOutOfRange { channel: &'static str, index: usize, value: f64 },
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Red,
    Green,
    Blue,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Red, Channel::Green, Channel::Blue];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Red => "red",
            Channel::Green => "green",
            Channel::Blue => "blue",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "r" | "red" => Ok(Channel::Red),
            "g" | "green" => Ok(Channel::Green),
            "b" | "blue" => Ok(Channel::Blue),
            other => Err(format!("unknown channel `{other}`")),
        }
    }
}

/// One value per color channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rgb<T> {
    pub red: T,
    pub green: T,
    pub blue: T,
}

impl<T> Rgb<T> {
    pub fn from_fn(mut f: impl FnMut(Channel) -> T) -> Self {
        Rgb { red: f(Channel::Red), green: f(Channel::Green), blue: f(Channel::Blue) }
    }

    pub fn try_from_fn<E>(mut f: impl FnMut(Channel) -> std::result::Result<T, E>) -> std::result::Result<Self, E> {
        Ok(Rgb { red: f(Channel::Red)?, green: f(Channel::Green)?, blue: f(Channel::Blue)? })
    }

    pub fn map<U>(&self, mut f: impl FnMut(Channel, &T) -> U) -> Rgb<U> {
        Rgb::from_fn(|c| f(c, &self[c]))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Channel, &T)> {
        Channel::ALL.into_iter().map(move |c| (c, &self[c]))
    }
}

impl<T> Index<Channel> for Rgb<T> {
    type Output = T;

    fn index(&self, c: Channel) -> &T {
        match c {
            Channel::Red => &self.red,
            Channel::Green => &self.green,
            Channel::Blue => &self.blue,
        }
    }
}

/// Shot-noise gain `a` and read-noise variance `b` for one channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub a: f64,
    pub b: f64,
}

impl ChannelParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let p = ChannelParams { a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.a.is_finite() || self.a < 0.0 {
            return Err(ModelError::InvalidInput { what: "gain a", value: self.a });
        }
        if !self.b.is_finite() || self.b < 0.0 {
            return Err(ModelError::InvalidInput { what: "variance b", value: self.b });
        }
        Ok(())
    }
}

/// Per-channel parameters: the `(a_R, a_G, a_B)` / `(b_R, b_G, b_B)` pair.
pub type NoiseParams = Rgb<ChannelParams>;

impl NoiseParams {
    pub fn from_vectors(a: [f64; 3], b: [f64; 3]) -> Result<Self> {
        Rgb::try_from_fn(|c| ChannelParams::new(a[c.index()], b[c.index()]))
    }

    pub fn validate_all(&self) -> Result<()> {
        self.iter().try_for_each(|(_, p)| p.validate())
    }
}

/// Row-major single-channel image of normalized intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    width: usize,
    height: usize,
    samples: Vec<f64>,
}

impl ImagePlane {
    pub fn new(width: usize, height: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ModelError::EmptyPlane { width, height });
        }
        if width.checked_mul(height) != Some(samples.len()) {
            return Err(ModelError::ShapeMismatch { width, height, len: samples.len() });
        }
        Ok(ImagePlane { width, height, samples })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut samples = Vec::with_capacity(width.saturating_mul(height));
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Self::new(width, height, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.samples[y * self.width + x]
    }

    pub fn clip(&mut self) {
        self.samples.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Checks the clean-image contract: every sample finite and in `[0, 1]`.
    pub fn check_unit_range(&self, channel: &'static str) -> Result<()> {
        match self.samples.iter().position(|v| !(0.0..=1.0).contains(v)) {
            Some(index) => Err(ModelError::SampleOutOfRange { channel, index, value: self.samples[index] }),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    planes: Rgb<ImagePlane>,
}

impl RgbImage {
    pub fn new(red: ImagePlane, green: ImagePlane, blue: ImagePlane) -> Result<Self> {
        Self::from_planes(Rgb { red, green, blue })
    }

    pub fn from_planes(planes: Rgb<ImagePlane>) -> Result<Self> {
        let dims = planes.map(|_, p| (p.width, p.height));
        if dims.red != dims.green || dims.red != dims.blue {
            return Err(ModelError::ChannelSizeMismatch(format!(
                "red {:?}, green {:?}, blue {:?}",
                dims.red, dims.green, dims.blue
            )));
        }
        Ok(RgbImage { planes })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        let plane = ImagePlane::constant(width, height, value)?;
        Self::new(plane.clone(), plane.clone(), plane)
    }

    pub fn width(&self) -> usize {
        self.planes.red.width
    }

    pub fn height(&self) -> usize {
        self.planes.red.height
    }

    pub fn plane(&self, c: Channel) -> &ImagePlane {
        &self.planes[c]
    }

    pub fn planes(&self) -> &Rgb<ImagePlane> {
        &self.planes
    }

    pub fn into_planes(self) -> Rgb<ImagePlane> {
        self.planes
    }

    pub fn clip(&mut self) {
        self.planes.red.clip();
        self.planes.green.clip();
        self.planes.blue.clip();
    }
}

fn check_intensity(y: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&y) {
        return Err(ModelError::InvalidInput { what: "intensity y", value: y });
    }
    Ok(())
}

// Callers have validated y and params.
#[inline]
fn shot_noise_unchecked<R: Rng + ?Sized>(y: f64, a: f64, rng: &mut R) -> f64 {
    if a == 0.0 || y == 0.0 {
        return y;
    }
    let lambda = y / a;
    // lambda = inf (subnormal a) also lands here
    if lambda >= GAUSSIAN_THRESHOLD {
        let z: f64 = rng.sample(StandardNormal);
        (y + (a * y).sqrt() * z).max(0.0)
    } else {
        a * poisson::sample(lambda, rng)
    }
}

#[inline]
fn read_noise_unchecked<R: Rng + ?Sized>(b: f64, rng: &mut R) -> f64 {
    if b == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    b.sqrt() * z
}

/// `y + n_p(y)`: returns `a * k` with `k ~ Poisson(y / a)`, or `y` when `a = 0`.
pub fn sample_poisson_component<R: Rng + ?Sized>(y: f64, a: f64, rng: &mut R) -> Result<f64> {
    check_intensity(y)?;
    if !a.is_finite() || a < 0.0 {
        return Err(ModelError::InvalidInput { what: "gain a", value: a });
    }
    Ok(shot_noise_unchecked(y, a, rng))
}

/// `n_g ~ N(0, b)`; exactly 0 when `b = 0`.
pub fn sample_gaussian_component<R: Rng + ?Sized>(b: f64, rng: &mut R) -> Result<f64> {
    if !b.is_finite() || b < 0.0 {
        return Err(ModelError::InvalidInput { what: "variance b", value: b });
    }
    Ok(read_noise_unchecked(b, rng))
}

/// `var(z) = a * y + b`.
pub fn predicted_variance(y: f64, params: ChannelParams) -> Result<f64> {
    check_intensity(y)?;
    params.validate()?;
    Ok(params.a * y + params.b)
}

/// Noisy copy of `clean`. Row `r` draws from `stream.substream(r)`, so the
/// output depends only on `(clean, params, stream)`.
pub fn add_noise_plane(
    clean: &ImagePlane,
    params: ChannelParams,
    stream: NoiseStream,
    clip: bool,
) -> Result<ImagePlane> {
    params.validate()?;
    clean.check_unit_range("input")?;
    Ok(noisy_plane_unchecked(clean, params, stream, clip))
}

fn noisy_plane_unchecked(clean: &ImagePlane, params: ChannelParams, stream: NoiseStream, clip: bool) -> ImagePlane {
    let mut out = clean.samples.clone();
    let ChannelParams { a, b } = params;
    if a == 0.0 && b == 0.0 {
        return ImagePlane { samples: out, ..*clean };
    }
    par::for_each_row(&mut out, clean.width, |r, row| {
        let mut rng = stream.substream(r as u64).rng();
        for v in row.iter_mut() {
            let z = shot_noise_unchecked(*v, a, &mut rng) + read_noise_unchecked(b, &mut rng);
            *v = if clip { z.clamp(0.0, 1.0) } else { z };
        }
    });
    ImagePlane { samples: out, ..*clean }
}

/// Channel `c` uses `stream.substream(c.index())`.
pub fn add_noise_rgb(clean: &RgbImage, params: &NoiseParams, stream: NoiseStream, clip: bool) -> Result<RgbImage> {
    params.validate_all()?;
    for (c, plane) in clean.planes.iter() {
        plane.check_unit_range(c.name())?;
    }
    let planes =
        Rgb::from_fn(|c| noisy_plane_unchecked(clean.plane(c), params[c], stream.substream(c.index() as u64), clip));
    Ok(RgbImage { planes })
}
