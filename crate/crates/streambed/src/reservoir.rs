//! Bounded-memory uniform sampling over unbounded streams.
//!
//! A [`Reservoir`] of capacity `m` maintains a uniform sample of everything it
//! has seen: after `t` observations every element has inclusion probability
//! `m/t`. Two update modes produce the same retained-sample distribution but
//! differ enormously in generator traffic:
//!
//! * **Standard** — classic per-element acceptance: element `t` is admitted
//!   with probability `m/t` and, if admitted, replaces a uniformly chosen
//!   slot. One uniform draw per element, a second per accepted replacement.
//! * **Jump** — instead of testing every element, sample the number of
//!   elements to skip until the next write directly from its closed-form
//!   distribution `P(gap >= d) = (t / (t + d))^m` via inverse transform
//!   (see [`sample_jump_gap`]). Exactly two draws per write, and untouched
//!   elements cost nothing but a counter increment.
//!
//! Expected writes after `t` elements are `m * (1 + ln(t/m))` in either mode,
//! so at `t/m = 1000` jump mode makes roughly 1–2% of the standard mode's
//! generator calls. Both modes track running extrema over the whole stream and
//! can be checkpointed to JSON and resumed bit-for-bit.
//!
//! [`OrderStatsEstimator`] is the natural low-memory alternative — average
//! per-batch order statistics across batches — kept here as a baseline: it is
//! cheap but systematically biased whenever the stream drifts, which the
//! `streamlab` verification suite quantifies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::CounterRng;

/// Current on-disk checkpoint layout version.
const CHECKPOINT_FORMAT: u32 = 1;

/// Errors from reservoir construction, estimation, and checkpointing.
#[derive(Debug, Error)]
pub enum ReservoirError {
    #[error("reservoir capacity must be at least 1")]
    ZeroCapacity,
    #[error("quantile level must lie strictly between 0 and 1, got {0}")]
    LevelOutOfRange(f64),
    #[error("reservoir holds no samples yet")]
    Empty,
    #[error("uniform draw must lie strictly inside (0, 1), got {0}")]
    UniformOutOfRange(f64),
    #[error("jump gap requires stream_index >= capacity >= 1, got t={t}, m={m}")]
    JumpPrecondition { t: u64, m: u64 },
    #[error("order-statistic levels must be strictly increasing and inside (0, 1)")]
    BadLevels,
    #[error("order-statistics update requires a non-empty batch")]
    EmptyBatch,
    #[error("batch values must be finite")]
    NonFiniteBatch,
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedFormat(u32),
    #[error("checkpoint is internally inconsistent: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// How the reservoir decides which elements to admit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Per-element Bernoulli acceptance test.
    Standard,
    /// Closed-form skip sampling between writes.
    Jump,
}

/// Immutable view of a reservoir's retained sample, sorted ascending.
///
/// Taken under a single borrow so downstream consumers (quantile tables,
/// estimators) never observe a half-updated reservoir.
#[derive(Debug, Clone)]
pub struct ReservoirSnapshot {
    sorted: Vec<f64>,
    version: u64,
    running_min: Option<f64>,
    running_max: Option<f64>,
}

impl ReservoirSnapshot {
    /// Retained samples in ascending order.
    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Mutation counter of the reservoir at snapshot time.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Smallest finite value observed on the whole stream, if any.
    pub fn running_min(&self) -> Option<f64> {
        self.running_min
    }

    /// Largest finite value observed on the whole stream, if any.
    pub fn running_max(&self) -> Option<f64> {
        self.running_max
    }

    /// Number of retained samples.
    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    /// True when nothing has been retained yet.
    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }
}

/// Checkpoint document; the serialized reservoir state contract.
///
/// The generator is stored as `(seed, draw count)` — with a counter-based
/// generator that pair reconstructs the exact mid-stream state.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    capacity: usize,
    mode: SamplingMode,
    stream_index: u64,
    next_update: u64,
    samples: Vec<f64>,
    rng_seed: u64,
    rng_calls: u64,
    writes: u64,
    version: u64,
    dropped: u64,
    running_min: Option<f64>,
    running_max: Option<f64>,
}

/// Fixed-capacity uniform sample of a stream. See the module docs.
#[derive(Debug, Clone)]
pub struct Reservoir {
    capacity: usize,
    samples: Vec<f64>,
    /// Count of stream elements observed so far, including skipped ones.
    stream_index: u64,
    /// Jump mode: stream index of the next scheduled write.
    next_update: u64,
    mode: SamplingMode,
    rng: CounterRng,
    /// Replacements performed after the fill phase.
    writes: u64,
    /// Monotone mutation counter; bumps on every admit or replacement.
    version: u64,
    /// Non-finite inputs skipped (dirty input signal, not an error).
    dropped: u64,
    running_min: Option<f64>,
    running_max: Option<f64>,
}

impl Reservoir {
    /// Creates a standard-mode reservoir.
    pub fn standard(capacity: usize, seed: u64) -> Result<Self, ReservoirError> {
        Self::with_mode(capacity, seed, SamplingMode::Standard)
    }

    /// Creates a jump-mode reservoir.
    pub fn jump(capacity: usize, seed: u64) -> Result<Self, ReservoirError> {
        Self::with_mode(capacity, seed, SamplingMode::Jump)
    }

    /// Creates a reservoir with an explicit sampling mode.
    pub fn with_mode(
        capacity: usize,
        seed: u64,
        mode: SamplingMode,
    ) -> Result<Self, ReservoirError> {
        if capacity == 0 {
            return Err(ReservoirError::ZeroCapacity);
        }
        Ok(Reservoir {
            capacity,
            samples: Vec::with_capacity(capacity),
            stream_index: 0,
            next_update: 0,
            mode,
            rng: CounterRng::new(seed),
            writes: 0,
            version: 0,
            dropped: 0,
            running_min: None,
            running_max: None,
        })
    }

    /// Feeds one stream element, dispatching on the sampling mode.
    ///
    /// Non-finite values are skipped but still advance the stream index and
    /// bump the [`dropped`](Self::dropped) counter.
    pub fn observe(&mut self, x: f64) {
        match self.mode {
            SamplingMode::Standard => self.observe_standard(x),
            SamplingMode::Jump => self.observe_jump(x),
        }
    }

    /// Feeds a slice of elements in order.
    pub fn observe_all(&mut self, xs: &[f64]) {
        for &x in xs {
            self.observe(x);
        }
    }

    fn observe_standard(&mut self, x: f64) {
        self.stream_index += 1;
        if !x.is_finite() {
            self.dropped += 1;
            return;
        }
        self.track_extrema(x);
        if self.samples.len() < self.capacity {
            self.samples.push(x);
            self.version += 1;
            return;
        }
        // Admit with probability m/t; one draw per element, one more per hit.
        let accept = self.rng.next_f64() < self.capacity as f64 / self.stream_index as f64;
        if accept {
            let slot = self.rng.next_index(self.capacity as u64) as usize;
            self.samples[slot] = x;
            self.writes += 1;
            self.version += 1;
        }
    }

    fn observe_jump(&mut self, x: f64) {
        self.stream_index += 1;
        if !x.is_finite() {
            self.dropped += 1;
            // A write scheduled exactly here lands on the next clean element
            // instead; rescheduling without a write would skew the per-write
            // draw accounting.
            if self.samples.len() == self.capacity && self.stream_index == self.next_update {
                self.next_update += 1;
            }
            return;
        }
        self.track_extrema(x);
        if self.samples.len() < self.capacity {
            self.samples.push(x);
            self.version += 1;
            if self.samples.len() == self.capacity {
                // Fill phase over: draw the first gap.
                self.schedule_next_write();
            }
            return;
        }
        if self.stream_index == self.next_update {
            // Slot draw first, then the next gap draw: two per write.
            let slot = self.rng.next_index(self.capacity as u64) as usize;
            self.samples[slot] = x;
            self.writes += 1;
            self.version += 1;
            self.schedule_next_write();
        }
    }

    /// Draws the gap to the next write and schedules it.
    fn schedule_next_write(&mut self) {
        let t = self.stream_index;
        let u = self.rng.next_f64();
        // The generator never emits exact 0 or 1, so this cannot fail.
        let delta = sample_jump_gap(t, self.capacity as u64, u)
            .expect("open-interval uniform satisfies the gap preconditions");
        self.next_update = t.saturating_add(delta).saturating_add(1);
    }

    fn track_extrema(&mut self, x: f64) {
        self.running_min = Some(self.running_min.map_or(x, |m| m.min(x)));
        self.running_max = Some(self.running_max.map_or(x, |m| m.max(x)));
    }

    /// Nearest-rank quantile of the retained sample: `sorted[ceil(a*n) - 1]`.
    pub fn estimate_quantile(&self, alpha: f64) -> Result<f64, ReservoirError> {
        if self.samples.is_empty() {
            return Err(ReservoirError::Empty);
        }
        let mut sorted = self.samples.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let idx = nearest_rank_index(alpha, sorted.len())?;
        Ok(sorted[idx])
    }

    /// Takes a sorted, versioned snapshot of the retained sample.
    pub fn snapshot(&self) -> ReservoirSnapshot {
        let mut sorted = self.samples.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        ReservoirSnapshot {
            sorted,
            version: self.version,
            running_min: self.running_min,
            running_max: self.running_max,
        }
    }

    /// Serializes the full state to a versioned JSON checkpoint.
    pub fn to_checkpoint_json(&self) -> String {
        let doc = Checkpoint {
            format_version: CHECKPOINT_FORMAT,
            capacity: self.capacity,
            mode: self.mode,
            stream_index: self.stream_index,
            next_update: self.next_update,
            samples: self.samples.clone(),
            rng_seed: self.rng.seed(),
            rng_calls: self.rng.calls(),
            writes: self.writes,
            version: self.version,
            dropped: self.dropped,
            running_min: self.running_min,
            running_max: self.running_max,
        };
        serde_json::to_string_pretty(&doc).expect("checkpoint fields are always serializable")
    }

    /// Restores a reservoir from [`Reservoir::to_checkpoint_json`] output.
    ///
    /// The restored reservoir continues the stream bit-for-bit identically to
    /// one that was never checkpointed.
    pub fn from_checkpoint_json(json: &str) -> Result<Self, ReservoirError> {
        let doc: Checkpoint = serde_json::from_str(json)?;
        if doc.format_version != CHECKPOINT_FORMAT {
            return Err(ReservoirError::UnsupportedFormat(doc.format_version));
        }
        if doc.capacity == 0 {
            return Err(ReservoirError::ZeroCapacity);
        }
        if doc.samples.len() > doc.capacity {
            return Err(ReservoirError::CorruptCheckpoint(format!(
                "{} samples exceed capacity {}",
                doc.samples.len(),
                doc.capacity
            )));
        }
        if doc.samples.iter().any(|x| !x.is_finite()) {
            return Err(ReservoirError::CorruptCheckpoint(
                "retained samples must be finite".into(),
            ));
        }
        Ok(Reservoir {
            capacity: doc.capacity,
            samples: doc.samples,
            stream_index: doc.stream_index,
            next_update: doc.next_update,
            mode: doc.mode,
            rng: CounterRng::restore(doc.rng_seed, doc.rng_calls),
            writes: doc.writes,
            version: doc.version,
            dropped: doc.dropped,
            running_min: doc.running_min,
            running_max: doc.running_max,
        })
    }

    /// Retained samples in insertion order (not sorted).
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Number of retained samples, `min(stream length, capacity)` on clean streams.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// True when no samples are retained yet.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Maximum number of retained samples.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Sampling mode.
    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    /// Count of stream elements observed, including skipped ones.
    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Jump mode: stream index of the next scheduled write.
    pub fn next_update(&self) -> u64 {
        self.next_update
    }

    /// Total generator draws made.
    pub fn rng_calls(&self) -> u64 {
        self.rng.calls()
    }

    /// Post-fill replacements performed.
    pub fn writes(&self) -> u64 {
        self.writes
    }

    /// Monotone mutation counter.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Non-finite inputs skipped so far.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Smallest finite value observed, if any.
    pub fn running_min(&self) -> Option<f64> {
        self.running_min
    }

    /// Largest finite value observed, if any.
    pub fn running_max(&self) -> Option<f64> {
        self.running_max
    }
}

/// Inverse-transform sample of the write gap: `floor(t * (u^(-1/m) - 1))`.
///
/// For a capacity-`m` reservoir that last wrote at stream index `t`, the
/// number of subsequent elements skipped before the next write has survival
/// `P(gap >= d) = (t / (t + d))^m`; plugging a uniform `u` into the inverse
/// of that survival yields the formula above. The result saturates at
/// `u64::MAX` for astronomically small `u`.
///
/// Note on conventions: for this discrete variable "survival at `d`" means
/// `P(gap >= d)` throughout this crate — that is the event "the next `d`
/// elements are all skipped", and it is the quantity the inverse transform
/// reproduces exactly.
pub fn sample_jump_gap(t: u64, m: u64, u: f64) -> Result<u64, ReservoirError> {
    if m == 0 || t < m {
        return Err(ReservoirError::JumpPrecondition { t, m });
    }
    if !(u > 0.0 && u < 1.0) {
        return Err(ReservoirError::UniformOutOfRange(u));
    }
    let delta = t as f64 * (u.powf(-1.0 / m as f64) - 1.0);
    if !delta.is_finite() || delta >= u64::MAX as f64 {
        return Ok(u64::MAX);
    }
    Ok(delta.floor() as u64)
}

/// Closed-form gap survival `P(gap >= d) = (t / (t + d))^m`.
pub fn gap_survival(t: u64, m: u64, delta: u64) -> f64 {
    (t as f64 / (t as f64 + delta as f64)).powi(m as i32)
}

/// Zero-based nearest-rank index: `ceil(alpha * n) - 1`.
///
/// The product is nudged down by ~1e-9 before the ceiling so that values that
/// are mathematically integral but land one ulp high (e.g. `0.15 * 20`) do
/// not get rounded up a rank.
pub fn nearest_rank_index(alpha: f64, n: usize) -> Result<usize, ReservoirError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ReservoirError::LevelOutOfRange(alpha));
    }
    debug_assert!(n > 0);
    let rank = (alpha * n as f64 - 1e-9).ceil().max(1.0) as usize;
    Ok(rank.min(n) - 1)
}

/// Streaming quantile baseline: average per-batch order statistics.
///
/// For each configured level, every incoming batch contributes its
/// nearest-rank order statistic and the estimator keeps the running mean of
/// those statistics across batches. Memory is `O(levels)`, but on drifting
/// streams the mean of local quantiles is a biased estimate of the global
/// quantile — see `streamlab::drifting_uniform_bias` for the closed form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderStatsEstimator {
    levels: Vec<f64>,
    running_means: Vec<f64>,
    batches_seen: u64,
}

impl OrderStatsEstimator {
    /// Creates an estimator for strictly increasing levels inside (0, 1).
    pub fn new(levels: &[f64]) -> Result<Self, ReservoirError> {
        if levels.is_empty()
            || levels.iter().any(|&a| !(a > 0.0 && a < 1.0))
            || levels.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(ReservoirError::BadLevels);
        }
        Ok(OrderStatsEstimator {
            levels: levels.to_vec(),
            running_means: vec![0.0; levels.len()],
            batches_seen: 0,
        })
    }

    /// Folds one batch of finite values into the running means.
    pub fn update(&mut self, batch: &[f64]) -> Result<(), ReservoirError> {
        if batch.is_empty() {
            return Err(ReservoirError::EmptyBatch);
        }
        if batch.iter().any(|x| !x.is_finite()) {
            return Err(ReservoirError::NonFiniteBatch);
        }
        let mut sorted = batch.to_vec();
        sorted.sort_unstable_by(f64::total_cmp);
        self.batches_seen += 1;
        let k = self.batches_seen as f64;
        for (level, mean) in self.levels.iter().zip(self.running_means.iter_mut()) {
            let stat = sorted[nearest_rank_index(*level, sorted.len())?];
            *mean += (stat - *mean) / k;
        }
        Ok(())
    }

    /// Configured levels.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Current mean order statistic per level (zeros before any batch).
    pub fn estimates(&self) -> &[f64] {
        &self.running_means
    }

    /// Number of batches folded in.
    pub fn batches_seen(&self) -> u64 {
        self.batches_seen
    }
}
