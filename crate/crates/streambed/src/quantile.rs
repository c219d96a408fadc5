//! Quantile tables and scalar encodings against them.
//!
//! A [`QuantileTable`] splits the observed value range into `M` equal-mass
//! bins: boundary `0` is the running stream minimum, boundary `M` the running
//! maximum, and the interior boundaries are equally spaced ranks of a sorted
//! reservoir snapshot. Against a table, a scalar can be encoded two ways:
//!
//! * [`encode`] — **thermometer in quantile space**: bins fully below the
//!   value contribute 1, the containing bin contributes the fractional
//!   position inside it, the rest 0. The vector sum (and its normalization
//!   [`ThermometerCode::quantile_position`]) is a piecewise-linear estimate
//!   of the CDF at the value, so nearby values get nearby codes regardless of
//!   how skewed the raw value axis is.
//! * [`encode_value_space`] — raw absolute distances to every boundary, kept
//!   as the baseline. Distances ignore which side of a boundary a value falls
//!   on, so two values straddling a boundary can receive nearly identical
//!   codes; the tests pin a concrete regression for that failure mode.
//!
//! Tables are cheap to rebuild but the backing reservoir mutates rarely
//! between batches, so [`TableCache`] memoizes on the reservoir's mutation
//! counter and only re-sorts when something actually changed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reservoir::{Reservoir, ReservoirSnapshot};

/// Errors from table construction and encoding.
#[derive(Debug, Error)]
pub enum CodecError {
    #[error("a quantile table needs at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("building a {bins}-bin table needs at least {bins} samples, snapshot has {have}")]
    NotEnoughSamples { bins: usize, have: usize },
    #[error("snapshot carries no running extrema (empty stream)")]
    MissingExtrema,
    #[error("cannot encode a non-finite value")]
    NonFiniteInput,
    #[error("table boundaries must be finite and non-decreasing")]
    BadBoundaries,
    #[error("table bin count {bins} does not match {count} boundaries")]
    ShapeMismatch { bins: usize, count: usize },
    #[error("table JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Equal-mass binning of an observed value range; see the module docs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTable {
    bins: usize,
    boundaries: Vec<f64>,
    source_version: u64,
}

impl QuantileTable {
    /// Builds a table directly from explicit boundaries (`bins + 1` of them,
    /// finite and non-decreasing).
    pub fn from_boundaries(
        boundaries: Vec<f64>,
        source_version: u64,
    ) -> Result<Self, CodecError> {
        if boundaries.len() < 3 {
            return Err(CodecError::TooFewBins(boundaries.len().saturating_sub(1)));
        }
        if boundaries.iter().any(|b| !b.is_finite())
            || boundaries.windows(2).any(|w| w[0] > w[1])
        {
            return Err(CodecError::BadBoundaries);
        }
        Ok(QuantileTable {
            bins: boundaries.len() - 1,
            boundaries,
            source_version,
        })
    }

    /// Number of bins `M`.
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// The `M + 1` bin boundaries, non-decreasing.
    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    /// Mutation counter of the reservoir this table was built from.
    pub fn source_version(&self) -> u64 {
        self.source_version
    }

    /// Serializes to a compact JSON document.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("table fields are always serializable")
    }

    /// Parses and validates a document produced by [`QuantileTable::to_json`].
    pub fn from_json(json: &str) -> Result<Self, CodecError> {
        let table: QuantileTable = serde_json::from_str(json)?;
        if table.bins + 1 != table.boundaries.len() {
            return Err(CodecError::ShapeMismatch {
                bins: table.bins,
                count: table.boundaries.len(),
            });
        }
        // Re-validate through the boundary constructor.
        QuantileTable::from_boundaries(table.boundaries, table.source_version)
    }
}

/// Builds an `bins`-bin table from a reservoir snapshot.
///
/// Interior boundary `j` is `sorted[floor(j * n / bins)]`; the outer
/// boundaries are the running stream extrema, which always bracket every
/// retained sample.
pub fn build_table(
    snapshot: &ReservoirSnapshot,
    bins: usize,
) -> Result<QuantileTable, CodecError> {
    if bins < 2 {
        return Err(CodecError::TooFewBins(bins));
    }
    let sorted = snapshot.sorted();
    if sorted.len() < bins {
        return Err(CodecError::NotEnoughSamples {
            bins,
            have: sorted.len(),
        });
    }
    let (min, max) = match (snapshot.running_min(), snapshot.running_max()) {
        (Some(lo), Some(hi)) => (lo, hi),
        _ => return Err(CodecError::MissingExtrema),
    };
    let n = sorted.len();
    let mut boundaries = Vec::with_capacity(bins + 1);
    boundaries.push(min);
    for j in 1..bins {
        boundaries.push(sorted[j * n / bins]);
    }
    boundaries.push(max);
    QuantileTable::from_boundaries(boundaries, snapshot.version())
}

/// Thermometer code of one scalar against a table.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermometerCode {
    bin_index: usize,
    fraction: f64,
    weights: Vec<f64>,
}

impl ThermometerCode {
    /// Index `j` of the containing bin, in `[0, M)`.
    pub fn bin_index(&self) -> usize {
        self.bin_index
    }

    /// Fractional position `w` inside the containing bin, in `[0, 1]`.
    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    /// The length-`M` weight vector `[1, …, 1, w, 0, …, 0]`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Consumes the code, returning the weight vector.
    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    /// Estimated CDF position `(j + w) / M`, in `[0, 1]`.
    ///
    /// Monotone in the input and, for tables without duplicate boundaries,
    /// continuous with slope at most `1 / (M * smallest bin width)`.
    pub fn quantile_position(&self) -> f64 {
        (self.bin_index as f64 + self.fraction) / self.weights.len() as f64
    }
}

/// Encodes a scalar as a quantile-space thermometer vector.
///
/// The input is clamped to the table range. Bins are half-open with the final
/// bin closed; when duplicate boundaries equal the input exactly, the value
/// lands at the start of the last bin whose left boundary equals it (`w = 0`),
/// which keeps the code monotone across the duplicated run.
pub fn encode(x: f64, table: &QuantileTable) -> Result<ThermometerCode, CodecError> {
    if !x.is_finite() {
        return Err(CodecError::NonFiniteInput);
    }
    let b = table.boundaries();
    let m = table.bins();
    let x = x.clamp(b[0], b[m]);
    let (j, w) = if x >= b[m] {
        (m - 1, 1.0)
    } else {
        // Last candidate bin whose left boundary is <= x.
        let j = b[..m].partition_point(|&q| q <= x) - 1;
        let gap = b[j + 1] - b[j];
        let w = if gap > 0.0 { (x - b[j]) / gap } else { 0.0 };
        (j, w)
    };
    let mut weights = vec![0.0; m];
    for slot in weights.iter_mut().take(j) {
        *slot = 1.0;
    }
    weights[j] = w;
    Ok(ThermometerCode {
        bin_index: j,
        fraction: w,
        weights,
    })
}

/// Encodes a scalar as absolute distances to every table boundary.
///
/// Length `M + 1`; the input is **not** clamped — distances are taken from
/// the raw value. Kept as the value-space baseline.
pub fn encode_value_space(x: f64, table: &QuantileTable) -> Result<Vec<f64>, CodecError> {
    if !x.is_finite() {
        return Err(CodecError::NonFiniteInput);
    }
    Ok(table.boundaries().iter().map(|&q| (x - q).abs()).collect())
}

/// Memoizes table construction on the reservoir's mutation counter.
///
/// Rebuilding sorts the retained sample, so between reservoir writes the
/// cached table is handed back untouched; the rebuild counter exists so tests
/// can assert exactly that.
#[derive(Debug, Clone)]
pub struct TableCache {
    bins: usize,
    cached: Option<QuantileTable>,
    rebuilds: u64,
}

impl TableCache {
    /// Creates a cache producing `bins`-bin tables.
    pub fn new(bins: usize) -> Self {
        TableCache {
            bins,
            cached: None,
            rebuilds: 0,
        }
    }

    /// Returns the table for the reservoir's current version, rebuilding only
    /// when the version moved since the last call.
    pub fn table_for(&mut self, reservoir: &Reservoir) -> Result<&QuantileTable, CodecError> {
        let stale = match &self.cached {
            Some(table) => table.source_version() != reservoir.version(),
            None => true,
        };
        if stale {
            self.cached = Some(build_table(&reservoir.snapshot(), self.bins)?);
            self.rebuilds += 1;
        }
        Ok(self.cached.as_ref().expect("just populated"))
    }

    /// Number of bins this cache builds.
    pub fn bins(&self) -> usize {
        self.bins
    }

    /// How many times a table was actually rebuilt.
    pub fn rebuilds(&self) -> u64 {
        self.rebuilds
    }

    /// The cached table, if any, without touching the reservoir.
    pub fn current(&self) -> Option<&QuantileTable> {
        self.cached.as_ref()
    }
}
