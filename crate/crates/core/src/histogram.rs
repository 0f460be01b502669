//! Binned empirical distributions and inverse transform sampling.
//!
//! A [`Histogram`] is a piecewise-constant density: bin `i` spans
//! `[edges[i], edges[i + 1])` and carries weight `mass[i]`. Sampling inverts
//! the piecewise-linear CDF, i.e. picks a bin by cumulative mass and then a
//! uniform point inside it.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistogramError {
    #[error("no values to bin")]
    Empty,
    #[error("bin count must be at least 1")]
    ZeroBins,
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("expected {expected} edges for {bins} bins, got {got}")]
    EdgeCount { bins: usize, expected: usize, got: usize },
    #[error("edges must be finite and strictly increasing (index {index})")]
    EdgesNotIncreasing { index: usize },
    #[error("mass[{index}] = {value} is negative or non-finite")]
    BadMass { index: usize, value: f64 },
    #[error("total mass must be positive and finite")]
    ZeroTotalMass,
}

pub type Result<T, E = HistogramError> = std::result::Result<T, E>;

/// Bins created by [`build_histogram`] when the caller has no preference.
pub const DEFAULT_BIN_COUNT: usize = 64;

/// Wire form; validated on the way in.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHistogram {
    edges: Vec<f64>,
    mass: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawHistogram", into = "RawHistogram")]
pub struct Histogram {
    edges: Vec<f64>,
    mass: Vec<f64>,
    /// Normalized cumulative mass; `cumulative[K - 1] == 1.0`.
    cumulative: Vec<f64>,
}

impl PartialEq for Histogram {
    fn eq(&self, other: &Self) -> bool {
        self.edges == other.edges && self.mass == other.mass
    }
}

impl TryFrom<RawHistogram> for Histogram {
    type Error = HistogramError;

    fn try_from(raw: RawHistogram) -> Result<Self> {
        Histogram::new(raw.edges, raw.mass)
    }
}

impl From<Histogram> for RawHistogram {
    fn from(h: Histogram) -> Self {
        RawHistogram { edges: h.edges, mass: h.mass }
    }
}

impl Histogram {
    pub fn new(edges: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(HistogramError::ZeroBins);
        }
        if edges.len() != mass.len() + 1 {
            return Err(HistogramError::EdgeCount { bins: mass.len(), expected: mass.len() + 1, got: edges.len() });
        }
        if let Some(index) = edges.iter().position(|e| !e.is_finite()) {
            return Err(HistogramError::EdgesNotIncreasing { index });
        }
        if let Some(index) = edges.windows(2).position(|w| w[0] >= w[1]) {
            return Err(HistogramError::EdgesNotIncreasing { index: index + 1 });
        }
        if let Some(index) = mass.iter().position(|m| !m.is_finite() || *m < 0.0) {
            return Err(HistogramError::BadMass { index, value: mass[index] });
        }
        let total: f64 = mass.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(HistogramError::ZeroTotalMass);
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = mass
            .iter()
            .map(|m| {
                acc += m;
                acc / total
            })
            .collect();
        // Trailing zero-mass bins share the last positive bin's cumulative value.
        let last_positive = mass.iter().rposition(|&m| m > 0.0).unwrap_or(0);
        for c in &mut cumulative[last_positive..] {
            *c = 1.0;
        }
        Ok(Histogram { edges, mass, cumulative })
    }

    /// Single bin of nominal width `max(|v| * 1e-6, 1e-12)` centered on `value`.
    pub fn point_mass(value: f64, weight: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(HistogramError::NonFinite { index: 0, value });
        }
        let half = (value.abs() * 1e-6).max(1e-12) / 2.0;
        Self::new(vec![value - half, value + half], vec![weight])
    }

    /// Single bin `[lo, hi)` with unit mass.
    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo, hi], vec![1.0])
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn bin_count(&self) -> usize {
        self.mass.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn lower(&self) -> f64 {
        self.edges[0]
    }

    pub fn upper(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    pub fn normalized_mass(&self) -> Vec<f64> {
        let total = self.total_mass();
        self.mass.iter().map(|m| m / total).collect()
    }

    fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1]))
    }

    /// Mean computed from bin centers.
    pub fn mean(&self) -> f64 {
        let total = self.total_mass();
        self.centers().zip(&self.mass).map(|(c, m)| c * m).sum::<f64>() / total
    }

    /// Variance computed from bin centers.
    pub fn variance(&self) -> f64 {
        let total = self.total_mass();
        let mean = self.mean();
        self.centers().zip(&self.mass).map(|(c, m)| m * (c - mean) * (c - mean)).sum::<f64>() / total
    }

    /// Piecewise-linear CDF of the histogram density.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lower() {
            return 0.0;
        }
        if x >= self.upper() {
            return 1.0;
        }
        // bin i with edges[i] <= x < edges[i + 1]
        let i = self.edges.partition_point(|&e| e <= x) - 1;
        let below = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        let frac = (x - self.edges[i]) / (self.edges[i + 1] - self.edges[i]);
        (below + (self.cumulative[i] - below) * frac).min(1.0)
    }

    /// Index of the bin selected by a uniform `u` in `[0, 1)`.
    fn bin_for(&self, u: f64) -> usize {
        // first bin whose cumulative mass exceeds u; zero-mass bins never win
        self.cumulative.partition_point(|&c| c <= u).min(self.bin_count() - 1)
    }

    /// Inverse transform sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let i = self.bin_for(rng.random());
        let (lo, hi) = (self.edges[i], self.edges[i + 1]);
        let x = lo + (hi - lo) * rng.random::<f64>();
        if x >= hi {
            hi.next_down()
        } else {
            x
        }
    }
}

/// Equal-width histogram over `[min(values), max(values)]` with
/// `Σ mass = values.len()`. All-equal input gives one point-mass bin.
pub fn build_histogram(values: &[f64], bin_count: usize) -> Result<Histogram> {
    if bin_count == 0 {
        return Err(HistogramError::ZeroBins);
    }
    if values.is_empty() {
        return Err(HistogramError::Empty);
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(HistogramError::NonFinite { index, value: values[index] });
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Histogram::point_mass(min, values.len() as f64);
    }

    let span = max - min;
    let mut edges: Vec<f64> = (0..=bin_count).map(|i| min + span * (i as f64 / bin_count as f64)).collect();
    edges[bin_count] = max;
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        // range too narrow to split at this precision
        return Histogram::new(vec![min, max], vec![values.len() as f64]);
    }

    let mut mass = vec![0.0; bin_count];
    let interior = &edges[1..bin_count];
    for &v in values {
        mass[interior.partition_point(|&e| e <= v)] += 1.0;
    }
    Histogram::new(edges, mass)
}

/// Free-function form of [`Histogram::sample`].
pub fn sample_histogram<R: Rng + ?Sized>(h: &Histogram, rng: &mut R) -> f64 {
    h.sample(rng)
}

/// Free-function form of [`Histogram::cdf`].
pub fn cdf(h: &Histogram, x: f64) -> f64 {
    h.cdf(x)
}
