//! PNG (and read-only JPEG) files <-> normalized [`RgbImage`]s, plus the
//! JSON sidecar written next to each generated image.
//!
//! Code values map to `code / (2^depth - 1)` with no gamma linearization:
//! noise is synthesized directly on decoded sRGB values.

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{DynamicImage, ImageEncoder, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Channel, ImagePlane, ModelError, NoiseParams, Rgb, RgbImage};

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("{path}: unsupported pixel format {format}")]
    UnsupportedFormat { path: PathBuf, format: String },
    #[error("bit depth must be 8 or 16 (got {0})")]
    BitDepth(u8),
    #[error("{channel} sample {index} = {value} is outside [0, 1]; clip before saving")]
    OutOfRange { channel: Channel, index: usize, value: f64 },
    #[error("{path}: malformed sidecar: {message}")]
    Sidecar { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = ImageIoError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub pixels: RgbImage,
    pub source_path: PathBuf,
    pub bit_depth: u8,
}

fn max_code(bit_depth: u8) -> Result<f64> {
    match bit_depth {
        8 => Ok(255.0),
        16 => Ok(65535.0),
        other => Err(ImageIoError::BitDepth(other)),
    }
}

/// `round(v * (2^depth - 1))`, ties away from zero.
pub fn quantize(v: f64, bit_depth: u8) -> Result<u16> {
    Ok((v * max_code(bit_depth)?).round() as u16)
}

pub fn dequantize(code: u16, bit_depth: u8) -> Result<f64> {
    Ok(f64::from(code) / max_code(bit_depth)?)
}

fn planes_from<T: Copy + Into<f64>>(width: u32, height: u32, raw: &[T], scale: f64) -> Result<RgbImage> {
    let (w, h) = (width as usize, height as usize);
    let plane = |c: usize| ImagePlane::new(w, h, raw.iter().skip(c).step_by(3).map(|&v| v.into() / scale).collect());
    Ok(RgbImage::new(plane(0)?, plane(1)?, plane(2)?)?)
}

pub fn load_image(path: &Path) -> Result<ImageRecord> {
    let decode_err = |message: String| ImageIoError::Decode { path: path.to_path_buf(), message };
    let reader = ImageReader::open(path)
        .map_err(|source| ImageIoError::Io { path: path.to_path_buf(), source })?
        .with_guessed_format()
        .map_err(|source| ImageIoError::Io { path: path.to_path_buf(), source })?;
    if reader.format() == Some(ImageFormat::Jpeg) {
        log::warn!("{}: JPEG input; compression artifacts are not modeled", path.display());
    }
    let img = reader.decode().map_err(|e| decode_err(e.to_string()))?;
    let color = img.color();
    if color.has_alpha() {
        log::warn!("{}: alpha channel discarded", path.display());
    }
    if !color.has_color() {
        log::warn!("{}: grayscale replicated to three channels", path.display());
    }
    let (w, h) = (img.width(), img.height());
    let (pixels, bit_depth) = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => (planes_from(w, h, img.to_rgb8().as_raw(), 255.0)?, 8),
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => (planes_from(w, h, img.to_rgb16().as_raw(), 65535.0)?, 16),
        other => {
            return Err(ImageIoError::UnsupportedFormat {
                path: path.to_path_buf(),
                format: format!("{:?}", other.color()),
            })
        }
    };
    Ok(ImageRecord { pixels, source_path: path.to_path_buf(), bit_depth })
}

fn interleave(img: &RgbImage, bit_depth: u8) -> Result<Vec<u16>> {
    let scale = max_code(bit_depth)?;
    for c in Channel::ALL {
        if let Some((index, &value)) =
            img.plane(c).samples().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(ImageIoError::OutOfRange { channel: c, index, value });
        }
    }
    let (r, g, b) =
        (img.plane(Channel::Red).samples(), img.plane(Channel::Green).samples(), img.plane(Channel::Blue).samples());
    Ok((0..r.len()).flat_map(|i| [r[i], g[i], b[i]]).map(|v| (v * scale).round() as u16).collect())
}

/// Writes a PNG. Values must already be in `[0, 1]`; nothing is clamped here.
pub fn save_image(img: &RgbImage, path: &Path, bit_depth: u8) -> Result<()> {
    let codes = interleave(img, bit_depth)?;
    let file = File::create(path).map_err(|source| ImageIoError::Io { path: path.to_path_buf(), source })?;
    let encoder = PngEncoder::new_with_quality(BufWriter::new(file), CompressionType::Default, FilterType::Adaptive);
    let (w, h) = (img.width() as u32, img.height() as u32);
    let result = if bit_depth == 8 {
        let bytes: Vec<u8> = codes.iter().map(|&c| c as u8).collect();
        encoder.write_image(&bytes, w, h, image::ExtendedColorType::Rgb8)
    } else {
        // The encoder takes native-endian samples and swaps them itself.
        let bytes: Vec<u8> = codes.iter().flat_map(|c| c.to_ne_bytes()).collect();
        encoder.write_image(&bytes, w, h, image::ExtendedColorType::Rgb16)
    };
    result.map_err(|e| ImageIoError::Encode { path: path.to_path_buf(), message: e.to_string() })
}

/// Provenance record stored as `<stem>.json` next to `<stem>.png`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub source_image: String,
    pub realization_index: usize,
    /// Seed given on the command line.
    pub seed: u64,
    /// Seed of this image's stream, derived from `seed` and the file stem.
    pub image_seed: u64,
    pub fixed_params: bool,
    pub clip: bool,
    /// SHA-256 of the canonical bundle bytes.
    pub bundle_id: String,
    pub params: NoiseParams,
}

impl Sidecar {
    pub fn new(params: NoiseParams, seed: u64, realization_index: usize) -> Self {
        Sidecar {
            source_image: String::new(),
            realization_index,
            seed,
            image_seed: seed,
            fixed_params: false,
            clip: true,
            bundle_id: String::new(),
            params,
        }
    }
}

pub fn sidecar_path(image_path: &Path) -> PathBuf {
    image_path.with_extension("json")
}

pub fn write_sidecar(sidecar: &Sidecar, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(sidecar).expect("sidecar serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| ImageIoError::Io { path: path.to_path_buf(), source })
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let bytes = std::fs::read(path).map_err(|source| ImageIoError::Io { path: path.to_path_buf(), source })?;
    let sidecar: Sidecar = serde_json::from_slice(&bytes)
        .map_err(|e| ImageIoError::Sidecar { path: path.to_path_buf(), message: e.to_string() })?;
    sidecar
        .params
        .validate_all()
        .map_err(|e| ImageIoError::Sidecar { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(sidecar)
}

/// Checks that all three planes are identical (an image that was gray on disk).
pub fn is_gray(img: &RgbImage) -> bool {
    let p: &Rgb<ImagePlane> = img.planes();
    p.red == p.green && p.red == p.blue
}
