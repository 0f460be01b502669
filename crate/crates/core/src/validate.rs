//! Monte-Carlo check of the variance law `var(z) = a * y + b`.
//!
//! Each check noises a constant plane at intensity `y` (clipping off) and
//! compares the sample variance with the prediction.

use std::fmt::Write as _;

use crate::generator::{self, GeneratorError, ParamBundle, DEFAULT_MAX_ATTEMPTS};
use crate::model::{self, Channel, ChannelParams, ImagePlane, ModelError, NoiseParams};
use crate::rng::NoiseStream;

/// Below this predicted variance the relative error is meaningless and an
/// absolute bound applies instead.
pub const ABSOLUTE_REGIME: f64 = 1e-5;
pub const ABSOLUTE_TOLERANCE: f64 = 1e-7;
pub const DEFAULT_TOLERANCE: f64 = 0.02;
pub const CSV_HEADER: &str = "channel,y,a,b,predicted_var,empirical_var,rel_err";

#[derive(Clone, Debug, PartialEq)]
pub struct ValidateOptions {
    pub param_sets: usize,
    pub plane_size: usize,
    pub y_grid: Vec<f64>,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            param_sets: 4,
            plane_size: 1024,
            y_grid: (1..=9).map(|k| k as f64 / 10.0).collect(),
            tolerance: DEFAULT_TOLERANCE,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationRow {
    pub channel: Channel,
    pub y: f64,
    pub a: f64,
    pub b: f64,
    pub predicted_var: f64,
    pub empirical_var: f64,
    /// `|empirical - predicted| / predicted`; `NaN` when predicted is 0.
    pub rel_err: f64,
}

impl ValidationRow {
    pub fn passes(&self, tolerance: f64) -> bool {
        if self.predicted_var < ABSOLUTE_REGIME {
            (self.empirical_var - self.predicted_var).abs() <= ABSOLUTE_TOLERANCE
        } else {
            self.rel_err <= tolerance
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub tolerance: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passes(self.tolerance))
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationRow> {
        self.rows.iter().filter(|r| !r.passes(self.tolerance))
    }

    pub fn max_rel_err(&self) -> f64 {
        self.rows.iter().filter(|r| r.predicted_var >= ABSOLUTE_REGIME).map(|r| r.rel_err).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:e},{:e},{:e},{:e},{:e}",
                r.channel, r.y, r.a, r.b, r.predicted_var, r.empirical_var, r.rel_err
            );
        }
        out
    }
}

/// Unbiased sample variance, two-pass on data shifted by the first value so
/// that a constant input gives exactly 0.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let shift = values[0];
    let mean = values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
    values.iter().map(|v| (v - shift - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Empirical noise variance of a `size x size` constant plane at `y`.
pub fn empirical_variance(y: f64, params: ChannelParams, size: usize, stream: NoiseStream) -> Result<f64, ModelError> {
    let clean = ImagePlane::constant(size, size, y)?;
    let noisy = model::add_noise_plane(&clean, params, stream, false)?;
    Ok(sample_variance(noisy.samples()))
}

fn check_row(
    channel: Channel,
    y: f64,
    params: ChannelParams,
    size: usize,
    stream: NoiseStream,
) -> Result<ValidationRow, ModelError> {
    let predicted_var = model::predicted_variance(y, params)?;
    let empirical_var = empirical_variance(y, params, size, stream)?;
    let rel_err = if predicted_var > 0.0 {
        (empirical_var - predicted_var).abs() / predicted_var
    } else if empirical_var == 0.0 {
        0.0
    } else {
        f64::NAN
    };
    Ok(ValidationRow { channel, y, a: params.a, b: params.b, predicted_var, empirical_var, rel_err })
}

/// One row per `(channel, y)` for a single parameter set.
pub fn validate_params(
    params: &NoiseParams,
    options: &ValidateOptions,
    stream: NoiseStream,
) -> Result<Vec<ValidationRow>, ModelError> {
    let mut rows = Vec::with_capacity(3 * options.y_grid.len());
    for c in Channel::ALL {
        for (k, &y) in options.y_grid.iter().enumerate() {
            let s = stream.substream(c.index() as u64).substream(k as u64);
            rows.push(check_row(c, y, params[c], options.plane_size, s)?);
        }
    }
    Ok(rows)
}

/// Draws `param_sets` parameter sets from the bundle and validates each.
pub fn validate_bundle(bundle: &ParamBundle, options: &ValidateOptions) -> Result<ValidationReport, GeneratorError> {
    let root = NoiseStream::new(options.seed);
    let mut rows = Vec::new();
    for k in 0..options.param_sets {
        let set = root.substream(k as u64);
        let params = generator::sample_noise_params_with(bundle, set.substream(0), DEFAULT_MAX_ATTEMPTS)?;
        rows.extend(validate_params(&params, options, set.substream(1))?);
    }
    Ok(ValidationReport { rows, tolerance: options.tolerance })
}
