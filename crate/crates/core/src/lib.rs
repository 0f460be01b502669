//! Signal-dependent Poissonian-Gaussian noise for smartphone sRGB images.
//!
//! Each pixel becomes `z = a * Poisson(y / a) + N(0, b)`, so its variance is
//! `a * y + b`. Per-channel `(a, b)` are drawn from a [`ParamBundle`]: nine
//! histograms of line slopes, line intercepts and `a` values that
//! [`calibration`] builds from clean/noisy image pairs.
//!
//! ```
//! use pgnoise::{add_noise_rgb, NoiseParams, NoiseStream, RgbImage};
//!
//! let clean = RgbImage::constant(64, 64, 0.5).unwrap();
//! let params = NoiseParams::from_vectors([2e-4, 1e-4, 1e-4], [3e-3, 4e-4, 9e-4]).unwrap();
//! let noisy = add_noise_rgb(&clean, &params, NoiseStream::new(7), true).unwrap();
//! assert_eq!(noisy.width(), 64);
//! ```

pub mod bundle_io;
pub mod calibration;
pub mod generator;
pub mod histogram;
pub mod image_io;
pub mod model;
pub mod par;
pub mod pipeline;
pub mod poisson;
pub mod rng;
pub mod synthetic;
pub mod validate;

pub use bundle_io::{parse_bundle, read_bundle, serialize_bundle, write_bundle, BundleError};
pub use calibration::{build_param_bundle, estimate_ab_paired, fit_line, AbEstimate, LineFit, ScenePair};
pub use generator::{
    generate_noisy_images, sample_noise_params, ChannelHistograms, NoiseGenerator, ParamBundle, Realization,
};
pub use histogram::{build_histogram, Histogram};
pub use image_io::{load_image, save_image, Sidecar};
pub use model::{
    add_noise_plane, add_noise_rgb, predicted_variance, Channel, ChannelParams, ImagePlane, NoiseParams, Rgb, RgbImage,
};
pub use rng::NoiseStream;
