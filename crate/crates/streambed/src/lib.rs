//! Streaming quantile estimation and distribution-aware numerical feature
//! embeddings.
//!
//! The pipeline this crate implements, end to end:
//!
//! 1. [`reservoir`] — bounded-memory uniform sampling over unbounded streams,
//!    with a jump-ahead mode that skips deterministically between writes, plus
//!    a batched order-statistics estimator used as a baseline.
//! 2. [`quantile`] — quantile tables built from reservoir snapshots and the
//!    thermometer / distance encodings of scalar values against a table.
//! 3. [`modulation`] — field-conditioned recalibration of encoded vectors and
//!    aggregation into dense embeddings, with exact analytic gradients.
//! 4. [`model`] — a small stream-trained binary classifier that exercises the
//!    whole embedding path, trained single-pass with manual backprop.
//! 5. [`streamlab`] — synthetic stream generators with analytic ground truth,
//!    plus the statistical machinery (KL, PSI, KS, Kruskal–Wallis,
//!    Wasserstein) used to verify all of the above.
//!
//! Everything is deterministic given a seed: generators, samplers, and
//! initializers all draw from counter-based streams ([`rng::CounterRng`])
//! so that any run can be checkpointed, resumed, and reproduced exactly.

pub mod metrics;
pub mod model;
pub mod modulation;
pub mod quantile;
pub mod reservoir;
pub mod rng;
pub mod streamlab;
pub mod tensor;

pub use reservoir::{OrderStatsEstimator, Reservoir, SamplingMode};
pub use rng::CounterRng;
