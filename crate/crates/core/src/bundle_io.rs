//! The bundle file: canonical, versioned JSON.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "channels": {
//!     "red":   { "slope_hist": H, "intercept_hist": H, "a_hist": H },
//!     "green": { ... },
//!     "blue":  { ... }
//!   },
//!   "metadata": { "key": "value", ... }
//! }
//! ```
//!
//! where each `H` is `{ "edges": [K + 1 numbers], "mass": [K numbers] }`.
//! Output is pretty-printed with two-space indentation, keys in the order
//! above (metadata keys sorted), no trailing newline, and every number
//! written as `{:.16e}` (17 significant digits), so the bytes are a pure
//! function of the bundle and every `f64` survives a round trip exactly.
//! The full grammar is in `docs/bundle-format.md`.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::ser::Serialize;
use serde::{Deserialize, Serialize as SerializeDerive};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::generator::{ChannelHistograms, ParamBundle};
use crate::histogram::Histogram;
use crate::model::Rgb;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("malformed bundle (line {line}, column {column}): {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("unsupported bundle format_version {found} (expected {FORMAT_VERSION})")]
    Version { found: String },
    #[error("invalid bundle at {path}: {reason}")]
    Validation { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

pub type Result<T, E = BundleError> = std::result::Result<T, E>;

#[derive(SerializeDerive, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistogramRecord {
    edges: Vec<f64>,
    mass: Vec<f64>,
}

#[derive(SerializeDerive, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelRecord {
    slope_hist: HistogramRecord,
    intercept_hist: HistogramRecord,
    a_hist: HistogramRecord,
}

#[derive(SerializeDerive, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleFile {
    format_version: u64,
    channels: Rgb<ChannelRecord>,
    metadata: BTreeMap<String, String>,
}

/// Pretty printer that writes every float with 17 significant digits.
struct CanonicalFormatter(PrettyFormatter<'static>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl Formatter for CanonicalFormatter {
    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        end_object_key();
        begin_object_value();
        end_object_value();
    }

    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
}

fn record(h: &Histogram) -> HistogramRecord {
    HistogramRecord { edges: h.edges().to_vec(), mass: h.mass().to_vec() }
}

/// Canonical bytes of `bundle`.
pub fn serialize_bundle(bundle: &ParamBundle) -> Vec<u8> {
    let file = BundleFile {
        format_version: FORMAT_VERSION,
        channels: bundle.channels().map(|_, h| ChannelRecord {
            slope_hist: record(&h.slope_hist),
            intercept_hist: record(&h.intercept_hist),
            a_hist: record(&h.a_hist),
        }),
        metadata: bundle.metadata().clone(),
    };
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter(PrettyFormatter::new()));
    file.serialize(&mut ser).expect("in-memory JSON serialization cannot fail");
    out
}

fn parse_error(e: serde_json::Error) -> BundleError {
    BundleError::Parse { line: e.line(), column: e.column(), message: e.to_string() }
}

fn validation(path: impl Into<String>, reason: impl Into<String>) -> BundleError {
    BundleError::Validation { path: path.into(), reason: reason.into() }
}

/// Parses and validates a bundle. Never returns a partially checked bundle.
pub fn parse_bundle(bytes: &[u8]) -> Result<ParamBundle> {
    let value: Value = serde_json::from_slice(bytes).map_err(parse_error)?;
    let Some(obj) = value.as_object() else {
        return Err(validation("$", "top level must be an object"));
    };
    match obj.get("format_version") {
        None => return Err(validation("format_version", "missing")),
        Some(v) if v.as_u64() == Some(FORMAT_VERSION) => {}
        Some(v) => return Err(BundleError::Version { found: v.to_string() }),
    }
    let file: BundleFile = serde_json::from_value(value).map_err(|e| validation("$", e.to_string()))?;

    let channels = Rgb::try_from_fn(|c| {
        let rec = &file.channels[c];
        let hist = |name: &str, r: &HistogramRecord| {
            Histogram::new(r.edges.clone(), r.mass.clone())
                .map_err(|e| validation(format!("channels.{c}.{name}"), e.to_string()))
        };
        Ok(ChannelHistograms {
            slope_hist: hist("slope_hist", &rec.slope_hist)?,
            intercept_hist: hist("intercept_hist", &rec.intercept_hist)?,
            a_hist: hist("a_hist", &rec.a_hist)?,
        })
    })?;
    ParamBundle::new(channels, file.metadata).map_err(|e| validation(e.path, e.reason))
}

pub fn read_bundle(path: &Path) -> Result<ParamBundle> {
    let bytes = std::fs::read(path).map_err(|source| BundleError::Io { path: path.display().to_string(), source })?;
    parse_bundle(&bytes)
}

pub fn write_bundle(bundle: &ParamBundle, path: &Path) -> Result<()> {
    std::fs::write(path, serialize_bundle(bundle))
        .map_err(|source| BundleError::Io { path: path.display().to_string(), source })
}

/// Hex SHA-256 of the canonical bytes; recorded in sidecars.
pub fn bundle_id(bundle: &ParamBundle) -> String {
    hex::encode(Sha256::digest(serialize_bundle(bundle)))
}
