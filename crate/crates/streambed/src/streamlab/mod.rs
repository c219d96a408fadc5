//! Synthetic stream generators with analytic ground truth.
//!
//! Every generator here comes with an exact distributional description
//! ([`MixtureTruth`]: point masses plus uniform pieces) of the values it
//! emits over a whole stream, so estimators can be scored against closed-form
//! CDFs and quantiles rather than against other estimators. Streams are
//! deterministic in `(spec, len, seed)`.
//!
//! The [`stats`] submodule holds the comparison machinery: binned KL against
//! a quantile table, population-stability and Kolmogorov–Smirnov drift
//! scores, Kruskal–Wallis, exact 1-D Wasserstein distance, autocorrelation,
//! and the closed-form bias of batched order statistics under drift.

pub mod stats;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Sample;
use crate::modulation::sigmoid;
use crate::rng::CounterRng;

/// Weight tolerance: per-time-step mixture weights must sum to one.
const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("invalid stream spec: {0}")]
    BadSpec(String),
    #[error("labels are only defined for category-conditional streams")]
    NotLabeled,
    #[error("stream length must be positive")]
    EmptyStream,
}

/// One point mass whose weight drifts linearly over the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomSpec {
    pub value: f64,
    pub start_weight: f64,
    pub end_weight: f64,
}

/// One uniform component whose location drifts linearly over the stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub weight: f64,
    pub lo: f64,
    pub width: f64,
    /// Total location shift from stream start to stream end.
    pub drift: f64,
}

/// One category of a conditional stream: pick rate, value window, and the
/// label-logit slope applied to the within-category quantile position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub weight: f64,
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
}

/// Declarative stream description; serializable so runs can be configured
/// from JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamSpec {
    /// I.i.d. `U(a, b)`.
    StationaryUniform { a: f64, b: f64 },
    /// `segments` consecutive windows tiling `[a, b]`: segment `s` draws
    /// `U(a + s*(b-a)/S, a + (s+1)*(b-a)/S)`. The whole-stream distribution
    /// is exactly `U(a, b)` whenever the windows get equal counts.
    DriftingUniform { a: f64, b: f64, segments: usize },
    /// `U(a, b)` shifted by `amplitude * sin(2*pi*j/phases)` where the phase
    /// `j` steps through `phases` discrete values once per `period` elements.
    PeriodicShift {
        a: f64,
        b: f64,
        amplitude: f64,
        period: usize,
        phases: usize,
    },
    /// Heavy point masses (weights drifting linearly over the stream) plus a
    /// thin continuous tail — the clustered regime that breaks value-space
    /// summaries.
    ClusteredInteger {
        atoms: Vec<AtomSpec>,
        tail_lo: f64,
        tail_hi: f64,
        tail_weight: f64,
    },
    /// Several well-separated uniform parts, each sliding by its own drift
    /// over `slices` discrete time slices — the spread regime.
    SpreadContinuous { parts: Vec<PartSpec>, slices: usize },
    /// Category `c` with probability `weight_c`, value `x ~ U(lo_c, hi_c)`,
    /// label `y ~ Bernoulli(sigmoid(slope_c * (F_c(x) - 1/2)))` where `F_c`
    /// is the within-category CDF. The label depends on the value only
    /// through its category-conditional quantile position.
    ///
    /// With `active_fields > 1`, each sample carries that many numeric
    /// fields, all drawn from the category's window; only field
    /// `c % active_fields` is the label-linked draw, the rest are fresh
    /// independent positions. Every field therefore has the *same* marginal
    /// distribution per category — which field matters is a pure
    /// category-by-field interaction.
    FieldConditional {
        categories: Vec<CategorySpec>,
        #[serde(default = "default_active_fields")]
        active_fields: usize,
    },
}

fn default_active_fields() -> usize {
    1
}

/// Clustered preset: four heavy small-integer atoms whose weights reverse
/// over the stream, with a 10% continuous tail over `[4, 100]`. Each atom
/// averages 22.5% mass over the full stream, but its share swings nearly to
/// zero at one end — per-window order statistics therefore cross atom
/// boundaries and any cross-window average lands between atoms, while a
/// position-uniform sample still recovers the averaged masses exactly.
pub fn clustered_preset() -> StreamSpec {
    StreamSpec::ClusteredInteger {
        atoms: vec![
            AtomSpec { value: 0.0, start_weight: 0.44, end_weight: 0.01 },
            AtomSpec { value: 1.0, start_weight: 0.40, end_weight: 0.05 },
            AtomSpec { value: 2.0, start_weight: 0.05, end_weight: 0.40 },
            AtomSpec { value: 3.0, start_weight: 0.01, end_weight: 0.44 },
        ],
        tail_lo: 4.0,
        tail_hi: 100.0,
        tail_weight: 0.10,
    }
}

/// Spread preset: three separated sliding uniform parts.
pub fn spread_preset() -> StreamSpec {
    StreamSpec::SpreadContinuous {
        parts: vec![
            PartSpec { weight: 0.5, lo: 0.0, width: 2.0, drift: 1.0 },
            PartSpec { weight: 0.3, lo: 10.0, width: 3.0, drift: -1.5 },
            PartSpec { weight: 0.2, lo: 25.0, width: 5.0, drift: 2.0 },
        ],
        slices: 16,
    }
}

impl StreamSpec {
    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |msg: String| Err(StreamError::BadSpec(msg));
        match self {
            StreamSpec::StationaryUniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && b > a) {
                    return bad(format!("need finite b > a, got [{a}, {b}]"));
                }
            }
            StreamSpec::DriftingUniform { a, b, segments } => {
                if !(a.is_finite() && b.is_finite() && b > a) {
                    return bad(format!("need finite b > a, got [{a}, {b}]"));
                }
                if *segments == 0 {
                    return bad("segments must be positive".into());
                }
            }
            StreamSpec::PeriodicShift {
                a,
                b,
                amplitude,
                period,
                phases,
            } => {
                if !(a.is_finite() && b.is_finite() && b > a) {
                    return bad(format!("need finite b > a, got [{a}, {b}]"));
                }
                if !amplitude.is_finite() {
                    return bad("amplitude must be finite".into());
                }
                if *period == 0 || *phases == 0 {
                    return bad("period and phases must be positive".into());
                }
            }
            StreamSpec::ClusteredInteger {
                atoms,
                tail_lo,
                tail_hi,
                tail_weight,
            } => {
                if atoms.is_empty() {
                    return bad("need at least one atom".into());
                }
                for a in atoms {
                    if !a.value.is_finite() || a.start_weight < 0.0 || a.end_weight < 0.0 {
                        return bad("atom values must be finite, weights non-negative".into());
                    }
                }
                if *tail_weight < 0.0 || (*tail_weight > 0.0 && !(tail_hi > tail_lo)) {
                    return bad("tail window must be non-degenerate when weighted".into());
                }
                let start: f64 = atoms.iter().map(|a| a.start_weight).sum::<f64>() + tail_weight;
                let end: f64 = atoms.iter().map(|a| a.end_weight).sum::<f64>() + tail_weight;
                if (start - 1.0).abs() > WEIGHT_TOL || (end - 1.0).abs() > WEIGHT_TOL {
                    return bad(format!(
                        "weights must sum to 1 at both ends (got {start} and {end})"
                    ));
                }
            }
            StreamSpec::SpreadContinuous { parts, slices } => {
                if parts.is_empty() {
                    return bad("need at least one part".into());
                }
                if *slices == 0 {
                    return bad("slices must be positive".into());
                }
                for p in parts {
                    if !(p.weight > 0.0 && p.width > 0.0 && p.lo.is_finite() && p.drift.is_finite())
                    {
                        return bad("parts need positive weight and width".into());
                    }
                }
            }
            StreamSpec::FieldConditional { categories, active_fields } => {
                if categories.is_empty() {
                    return bad("need at least one category".into());
                }
                if *active_fields == 0 {
                    return bad("need at least one numeric field".into());
                }
                for c in categories {
                    if !(c.weight > 0.0 && c.hi > c.lo && c.slope.is_finite()) {
                        return bad("categories need positive weight and hi > lo".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of categories a labeled stream emits (1 for unconditional).
    pub fn category_count(&self) -> usize {
        match self {
            StreamSpec::FieldConditional { categories, .. } => categories.len(),
            _ => 1,
        }
    }

    /// Number of numeric fields per labeled sample (1 for unconditional).
    pub fn numeric_field_count(&self) -> usize {
        match self {
            StreamSpec::FieldConditional { active_fields, .. } => *active_fields,
            _ => 1,
        }
    }

    /// Generates the numeric value stream.
    pub fn generate(&self, len: usize, seed: u64) -> Result<Vec<f64>, StreamError> {
        self.validate()?;
        if len == 0 {
            return Err(StreamError::EmptyStream);
        }
        let mut rng = CounterRng::new(CounterRng::derive_seed(seed, 0x57));
        let mut out = Vec::with_capacity(len);
        match self {
            StreamSpec::StationaryUniform { a, b } => {
                for _ in 0..len {
                    out.push(a + (b - a) * rng.next_f64());
                }
            }
            StreamSpec::DriftingUniform { a, b, segments } => {
                let w = (b - a) / *segments as f64;
                for i in 0..len {
                    let s = (i * segments / len) as f64;
                    out.push(a + w * (s + rng.next_f64()));
                }
            }
            StreamSpec::PeriodicShift {
                a,
                b,
                amplitude,
                period,
                phases,
            } => {
                for i in 0..len {
                    let j = (i % period) * phases / period;
                    let off = amplitude
                        * (2.0 * std::f64::consts::PI * j as f64 / *phases as f64).sin();
                    out.push(a + off + (b - a) * rng.next_f64());
                }
            }
            StreamSpec::ClusteredInteger {
                atoms,
                tail_lo,
                tail_hi,
                tail_weight: _,
            } => {
                let denom = (len.max(2) - 1) as f64;
                for i in 0..len {
                    let frac = i as f64 / denom;
                    let u = rng.next_f64();
                    let mut acc = 0.0;
                    let mut x = None;
                    for atom in atoms {
                        acc += atom.start_weight + frac * (atom.end_weight - atom.start_weight);
                        if u < acc {
                            x = Some(atom.value);
                            break;
                        }
                    }
                    // Remaining mass (validated to equal `tail_weight` at
                    // every time step) falls through to the tail window.
                    out.push(x.unwrap_or_else(|| {
                        tail_lo + (tail_hi - tail_lo) * rng.next_f64()
                    }));
                }
            }
            StreamSpec::SpreadContinuous { parts, slices } => {
                let total: f64 = parts.iter().map(|p| p.weight).sum();
                let sdenom = ((*slices).max(2) - 1) as f64;
                for i in 0..len {
                    let s = i * slices / len;
                    let frac = s as f64 / sdenom;
                    let u = rng.next_f64() * total;
                    let mut acc = 0.0;
                    let mut chosen = parts.len() - 1;
                    for (k, p) in parts.iter().enumerate() {
                        acc += p.weight;
                        if u < acc {
                            chosen = k;
                            break;
                        }
                    }
                    let p = &parts[chosen];
                    out.push(p.lo + p.drift * frac + p.width * rng.next_f64());
                }
            }
            StreamSpec::FieldConditional { .. } => {
                for s in self.generate_labeled(len, seed)? {
                    out.push(s.numerical[0]);
                }
                return Ok(out);
            }
        }
        Ok(out)
    }

    /// Generates labeled samples; only conditional streams carry labels.
    pub fn generate_labeled(&self, len: usize, seed: u64) -> Result<Vec<Sample>, StreamError> {
        self.validate()?;
        if len == 0 {
            return Err(StreamError::EmptyStream);
        }
        let StreamSpec::FieldConditional { categories, active_fields } = self else {
            return Err(StreamError::NotLabeled);
        };
        let mut rng = CounterRng::new(CounterRng::derive_seed(seed, 0x57));
        let total: f64 = categories.iter().map(|c| c.weight).sum();
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            let u = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut c = categories.len() - 1;
            for (k, cat) in categories.iter().enumerate() {
                acc += cat.weight;
                if u < acc {
                    c = k;
                    break;
                }
            }
            let cat = &categories[c];
            let pos = rng.next_f64();
            let active = c % active_fields;
            let mut numerical = Vec::with_capacity(*active_fields);
            for field in 0..*active_fields {
                let q = if field == active { pos } else { rng.next_f64() };
                numerical.push(cat.lo + (cat.hi - cat.lo) * q);
            }
            let p = sigmoid(cat.slope * (pos - 0.5));
            let label = rng.next_f64() < p;
            out.push(Sample {
                categorical: vec![c as u32],
                numerical,
                label,
            });
        }
        Ok(out)
    }

    /// Exact distribution of the values emitted by `generate(len, ..)`,
    /// aggregated over the whole stream.
    pub fn truth(&self, len: usize) -> Result<MixtureTruth, StreamError> {
        self.validate()?;
        if len == 0 {
            return Err(StreamError::EmptyStream);
        }
        let n = len as f64;
        match self {
            StreamSpec::StationaryUniform { a, b } => {
                MixtureTruth::new(vec![], vec![(*a, *b, 1.0)])
            }
            StreamSpec::DriftingUniform { a, b, segments } => {
                let s_count = *segments;
                let w = (b - a) / s_count as f64;
                let mut pieces = Vec::with_capacity(s_count);
                for s in 0..s_count {
                    // Elements with floor(i*S/len) == s, counted exactly.
                    let first = (s * len).div_ceil(s_count);
                    let last = ((s + 1) * len).div_ceil(s_count);
                    let mass = (last - first) as f64 / n;
                    if mass > 0.0 {
                        let lo = a + w * s as f64;
                        pieces.push((lo, lo + w, mass));
                    }
                }
                MixtureTruth::new(vec![], pieces)
            }
            StreamSpec::PeriodicShift {
                a,
                b,
                amplitude,
                period,
                phases,
            } => {
                // Exact per-phase counts over the whole stream.
                let mut counts = vec![0usize; *phases];
                let full = len / period;
                for r in 0..*period {
                    let j = r * phases / period;
                    counts[j] += full + usize::from(r < len % period);
                }
                let mut pieces = Vec::new();
                for (j, &c) in counts.iter().enumerate() {
                    if c == 0 {
                        continue;
                    }
                    let off = amplitude
                        * (2.0 * std::f64::consts::PI * j as f64 / *phases as f64).sin();
                    pieces.push((a + off, b + off, c as f64 / n));
                }
                MixtureTruth::new(vec![], pieces)
            }
            StreamSpec::ClusteredInteger {
                atoms,
                tail_lo,
                tail_hi,
                tail_weight,
            } => {
                // Linear weight drift averages to the endpoint midpoint.
                let atom_masses = atoms
                    .iter()
                    .map(|a| (a.value, 0.5 * (a.start_weight + a.end_weight)))
                    .collect();
                let pieces = if *tail_weight > 0.0 {
                    vec![(*tail_lo, *tail_hi, *tail_weight)]
                } else {
                    vec![]
                };
                MixtureTruth::new(atom_masses, pieces)
            }
            StreamSpec::SpreadContinuous { parts, slices } => {
                let total: f64 = parts.iter().map(|p| p.weight).sum();
                let sdenom = ((*slices).max(2) - 1) as f64;
                let mut pieces = Vec::new();
                for s in 0..*slices {
                    let first = (s * len).div_ceil(*slices);
                    let last = ((s + 1) * len).div_ceil(*slices);
                    let slice_mass = (last - first) as f64 / n;
                    if slice_mass == 0.0 {
                        continue;
                    }
                    let frac = s as f64 / sdenom;
                    for p in parts {
                        let lo = p.lo + p.drift * frac;
                        pieces.push((lo, lo + p.width, slice_mass * p.weight / total));
                    }
                }
                MixtureTruth::new(vec![], pieces)
            }
            StreamSpec::FieldConditional { categories, .. } => {
                // Decoy fields share each category's window, so this is the
                // marginal of every numeric field.
                let total: f64 = categories.iter().map(|c| c.weight).sum();
                let pieces = categories
                    .iter()
                    .map(|c| (c.lo, c.hi, c.weight / total))
                    .collect();
                MixtureTruth::new(vec![], pieces)
            }
        }
    }
}

/// Exact distribution: point masses plus (possibly overlapping) uniform
/// pieces. Total mass must be 1.
#[derive(Debug, Clone)]
pub struct MixtureTruth {
    /// `(value, mass)`, sorted by value, duplicates merged.
    atoms: Vec<(f64, f64)>,
    /// `(lo, hi, mass)` uniform components.
    pieces: Vec<(f64, f64, f64)>,
    /// Sorted union of atom positions and piece endpoints.
    breakpoints: Vec<f64>,
}

impl MixtureTruth {
    pub fn new(
        atoms: Vec<(f64, f64)>,
        pieces: Vec<(f64, f64, f64)>,
    ) -> Result<Self, StreamError> {
        let mut merged: Vec<(f64, f64)> = Vec::new();
        let mut sorted = atoms;
        sorted.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (v, m) in sorted {
            if m < 0.0 || !v.is_finite() {
                return Err(StreamError::BadSpec("bad atom in truth".into()));
            }
            if m == 0.0 {
                continue;
            }
            match merged.last_mut() {
                Some((lv, lm)) if *lv == v => *lm += m,
                _ => merged.push((v, m)),
            }
        }
        for &(lo, hi, m) in &pieces {
            if !(hi > lo) || m < 0.0 {
                return Err(StreamError::BadSpec("bad piece in truth".into()));
            }
        }
        let pieces: Vec<_> = pieces.into_iter().filter(|p| p.2 > 0.0).collect();
        let total: f64 = merged.iter().map(|a| a.1).sum::<f64>()
            + pieces.iter().map(|p| p.2).sum::<f64>();
        if (total - 1.0).abs() > 1e-6 {
            return Err(StreamError::BadSpec(format!(
                "truth mass sums to {total}, expected 1"
            )));
        }
        // Renormalize away the small rounding residue so cdf(sup) == 1.
        let merged: Vec<_> = merged.into_iter().map(|(v, m)| (v, m / total)).collect();
        let pieces: Vec<_> = pieces
            .into_iter()
            .map(|(lo, hi, m)| (lo, hi, m / total))
            .collect();

        let mut breakpoints: Vec<f64> = merged.iter().map(|a| a.0).collect();
        for &(lo, hi, _) in &pieces {
            breakpoints.push(lo);
            breakpoints.push(hi);
        }
        breakpoints.sort_by(f64::total_cmp);
        breakpoints.dedup();
        Ok(MixtureTruth {
            atoms: merged,
            pieces,
            breakpoints,
        })
    }

    /// Smallest and largest attainable value.
    pub fn support(&self) -> (f64, f64) {
        (self.breakpoints[0], self.breakpoints[self.breakpoints.len() - 1])
    }

    /// Exact CDF `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        let mut f = 0.0;
        for &(v, m) in &self.atoms {
            if v <= x {
                f += m;
            }
        }
        for &(lo, hi, m) in &self.pieces {
            if x >= hi {
                f += m;
            } else if x > lo {
                f += m * (x - lo) / (hi - lo);
            }
        }
        f.min(1.0)
    }

    /// CDF limit from the left, `P(X < x)`.
    fn cdf_left(&self, x: f64) -> f64 {
        let atom = self
            .atoms
            .iter()
            .find(|&&(v, _)| v == x)
            .map_or(0.0, |&(_, m)| m);
        self.cdf(x) - atom
    }

    /// Exact generalized inverse CDF, `inf { x : F(x) >= p }`.
    pub fn quantile(&self, p: f64) -> f64 {
        let (lo, hi) = self.support();
        if p <= 0.0 {
            return lo;
        }
        if p >= 1.0 {
            return hi;
        }
        let mut prev = lo;
        let mut f_prev = self.cdf(lo);
        if p <= f_prev {
            return lo;
        }
        for &b in &self.breakpoints[1..] {
            let f_left = self.cdf_left(b);
            if p <= f_left {
                // Inside (prev, b): F climbs linearly from f_prev to f_left.
                if f_left > f_prev {
                    return prev + (p - f_prev) / (f_left - f_prev) * (b - prev);
                }
                // Flat gap: F first reaches p at b.
                return b;
            }
            let f_right = self.cdf(b);
            if p <= f_right {
                return b; // Atom jump covers p.
            }
            prev = b;
            f_prev = f_right;
        }
        hi
    }

    /// `bins + 1` boundaries at quantile levels `0, 1/bins, ..., 1`.
    pub fn boundaries(&self, bins: usize) -> Vec<f64> {
        (0..=bins)
            .map(|j| self.quantile(j as f64 / bins as f64))
            .collect()
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn pieces(&self) -> &[(f64, f64, f64)] {
        &self.pieces
    }
}
