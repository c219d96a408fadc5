//! Acceptance gate: one test per shipped guarantee, pinned at the stated
//! tolerances. Each test prints a single `criterion N ...: PASS` line with
//! its measured numbers (visible under `--nocapture`, and on any failure);
//! the test name itself carries the verdict in normal output.
//!
//! These are end-to-end statistical checks against analytic oracles, not
//! unit tests; seeds are fixed so every run is reproducible bit for bit.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use streambed::metrics::PROB_EPS;
use streambed::model::{
    CatFieldSpec, EncoderKind, ModelConfig, OptimizerKind, Sample, StreamSchema, Trainer,
};
use streambed::modulation::{
    aggregate, aggregate_backward, init_meta_embeddings, FieldModulation, ModulationKind,
};
use streambed::quantile::{encode, encode_value_space, QuantileTable, TableCache};
use streambed::reservoir::{
    gap_survival, sample_jump_gap, OrderStatsEstimator, Reservoir, SamplingMode,
};
use streambed::rng::CounterRng;
use streambed::streamlab::stats::{
    autocorrelation, drift_report, drifting_uniform_bias, kl_divergence_binned, ks_two_sample,
    psi,
};
use streambed::streamlab::{clustered_preset, spread_preset, StreamSpec};

/// Every acceptance experiment derives its seeds from one root so the whole
/// gate is a single deterministic artifact.
const ROOT_SEED: u64 = 0x5EED_ACCE;

fn seed(stream: u64) -> u64 {
    CounterRng::derive_seed(ROOT_SEED, stream)
}

// ---------------------------------------------------------------------------
// 1. Uniform inclusion probability of reservoir sampling.
// ---------------------------------------------------------------------------

/// Every stream position must land in the final reservoir with probability
/// exactly m/t; chi-square over all t positions across many independent
/// runs must not reject uniformity at p > 0.01.
#[test]
fn criterion_01_inclusion_probability_is_uniform() {
    let (m, t, runs) = (100usize, 10_000usize, 10_000usize);
    let mut counts = vec![0u64; t];
    for run in 0..runs {
        let mut r = Reservoir::with_mode(m, seed(100 + run as u64), SamplingMode::Standard)
            .expect("positive capacity");
        for i in 0..t {
            r.observe(i as f64);
        }
        for &x in r.samples() {
            counts[x as usize] += 1;
        }
    }
    let expected = (runs * m) as f64 / t as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum();
    let df = (t - 1) as f64;
    let p = ChiSquared::new(df).unwrap().sf(chi2);
    println!(
        "criterion 1 (inclusion uniformity): PASS gate p > 0.01 — chi2 = {chi2:.1} on {df} df, \
         p = {p:.4}, mean count {expected}"
    );
    assert!(
        p > 0.01,
        "inclusion not uniform: chi2 = {chi2:.1} on {df} df gives p = {p:.2e} <= 0.01"
    );
}

// ---------------------------------------------------------------------------
// 2. The jump-length law against a simulated standard reservoir.
// ---------------------------------------------------------------------------

/// One gap of a standard reservoir at state `t0`: the count of consecutive
/// rejections before the next accepted element, each element `t0 + i`
/// accepted with probability `m / (t0 + i)`.
fn standard_reservoir_gap(rng: &mut CounterRng, t0: u64, m: u64) -> u64 {
    let mut delta = 0u64;
    loop {
        let next = (t0 + delta + 1) as f64;
        if rng.next_f64() < m as f64 / next {
            return delta;
        }
        delta += 1;
    }
}

/// Survival matching is exact by construction (inverse-transform sampling
/// reproduces the closed form), and is asserted to ±1% absolute. The
/// two-sample KS clause compares the closed-form law against the *true*
/// standard-reservoir gap distribution; the law's power-form survival
/// deviates from the exact product form by up to ~0.009 in CDF around
/// delta ≈ 20 at (t=10^3, m=50), which 2x10^5 samples resolve, so this
/// clause measures a real approximation gap rather than sampler noise.
#[test]
fn criterion_02_jump_gap_law_vs_standard_reservoir() {
    let (t0, m) = (1_000u64, 50u64);

    // Clause A: empirical survival vs (t/(t+delta))^m, +-1% absolute.
    let n_surv = 1_000_000usize;
    let mut rng = CounterRng::new(seed(200));
    let mut gaps = Vec::with_capacity(n_surv);
    for _ in 0..n_surv {
        gaps.push(sample_jump_gap(t0, m, rng.next_f64()).unwrap());
    }
    for delta in [1u64, 10, 100] {
        let hit = gaps.iter().filter(|&&g| g >= delta).count() as f64 / n_surv as f64;
        let law = gap_survival(t0, m, delta);
        assert!(
            (hit - law).abs() <= 0.01,
            "survival at delta={delta}: empirical {hit:.5} vs law {law:.5}"
        );
        println!(
            "criterion 2 survival delta={delta}: empirical {hit:.5} vs law {law:.5} \
             (|diff| = {:.5} <= 0.01)",
            (hit - law).abs()
        );
    }

    // Clause B: two-sample KS, jump-law gaps vs simulated standard gaps.
    let n_ks = 100_000usize;
    let mut law_rng = CounterRng::new(seed(201));
    let mut std_rng = CounterRng::new(seed(202));
    let law_gaps: Vec<f64> = (0..n_ks)
        .map(|_| sample_jump_gap(t0, m, law_rng.next_f64()).unwrap() as f64)
        .collect();
    let std_gaps: Vec<f64> = (0..n_ks)
        .map(|_| standard_reservoir_gap(&mut std_rng, t0, m) as f64)
        .collect();
    let ks = ks_two_sample(&law_gaps, &std_gaps).unwrap();

    // Where the distributions actually differ, for the record.
    let worst_delta = 20u64;
    let law_s = gap_survival(t0, m, worst_delta);
    let exact_s: f64 = (1..=worst_delta)
        .map(|i| 1.0 - m as f64 / (t0 + i) as f64)
        .product();
    println!(
        "criterion 2 (gap law vs standard KS): gate p > 0.01 — D = {:.5}, p = {:.2e}; \
         analytic CDF gap at delta={worst_delta}: law {law_s:.5} vs exact {exact_s:.5}",
        ks.statistic, ks.p_value
    );
    assert!(
        ks.p_value > 0.01,
        "two-sample KS rejects the closed-form gap law against the simulated standard \
         reservoir: D = {:.5}, p = {:.2e} <= 0.01 with {n_ks} gaps per side. The law's \
         power-form survival differs from the exact product form by {:.5} in CDF at \
         delta = {worst_delta} (law {law_s:.5} vs exact {exact_s:.5}); that systematic \
         offset exceeds the two-sample KS resolution ~0.006 at this sample size, so the \
         test detects the law's finite-t approximation error itself.",
        ks.statistic,
        ks.p_value,
        (law_s - exact_s).abs(),
    );
}

// ---------------------------------------------------------------------------
// 3. Write complexity and rng-call economy of jump scheduling.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_jump_write_complexity_and_rng_economy() {
    let (t, m) = (10_000_000usize, 10_000usize);
    let runs = 3u64;
    let mut total_writes = 0.0;
    let mut jump_calls = 0u64;
    let mut std_calls = 0u64;
    for run in 0..runs {
        let mut jump = Reservoir::with_mode(m, seed(300 + run), SamplingMode::Jump).unwrap();
        for i in 0..t {
            jump.observe(i as f64);
        }
        // Total insertions: the m fill writes plus every scheduled write.
        total_writes += (m as u64 + jump.writes()) as f64;
        jump_calls += jump.rng_calls();

        let mut std = Reservoir::with_mode(m, seed(320 + run), SamplingMode::Standard).unwrap();
        for i in 0..t {
            std.observe(i as f64);
        }
        std_calls += std.rng_calls();
    }
    let measured = total_writes / runs as f64;
    let predicted = m as f64 * (1.0 + (t as f64 / m as f64).ln());
    let ratio = measured / predicted;
    let call_ratio = jump_calls as f64 / std_calls as f64;
    println!(
        "criterion 3 (complexity): PASS gates |ratio-1| <= 0.10 and rng ratio < 0.05 — \
         writes {measured:.0} vs predicted {predicted:.0} (ratio {ratio:.3}); \
         rng calls {jump_calls} vs {std_calls} (ratio {call_ratio:.4})"
    );
    assert!(
        (ratio - 1.0).abs() <= 0.10,
        "writes {measured:.0} vs predicted {predicted:.0} (ratio {ratio:.3}) outside +-10%"
    );
    assert!(
        call_ratio < 0.05,
        "jump mode used {call_ratio:.4} of standard-mode rng draws, gate < 0.05"
    );
}

// ---------------------------------------------------------------------------
// 4. Order-statistics bias under drift vs the closed form; reservoir
//    unbiasedness on the same streams.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_order_stat_bias_closed_form_and_reservoir_unbiasedness() {
    let levels = [0.1, 0.25, 0.5, 0.75, 0.9];
    let (batches, batch_size) = (10usize, 100_000usize);
    let seeds: Vec<u64> = (0u64..20).map(|k| seed(400 + k)).collect();

    for &alpha in &levels {
        let report =
            drifting_uniform_bias(alpha, 0.0, 1.0, batches, batch_size, &seeds).unwrap();
        let gap = (report.empirical_bias - report.closed_form_bias).abs();
        println!(
            "criterion 4 OS alpha={alpha}: empirical {:+.5} vs closed form {:+.5} \
             (|diff| = {gap:.5} <= 0.01)",
            report.empirical_bias, report.closed_form_bias
        );
        assert!(
            gap <= 0.01,
            "alpha={alpha}: OS bias {:+.5} vs closed form {:+.5}",
            report.empirical_bias,
            report.closed_form_bias
        );
    }

    // Reservoir estimator on the same drifting stream: global quantiles come
    // out unbiased because inclusion is position-uniform. Jump scheduling is
    // measured alongside: its early-stream over-retention is a real, small
    // effect and is reported rather than hidden.
    let spec = StreamSpec::DriftingUniform {
        a: 0.0,
        b: 1.0,
        segments: batches,
    };
    let m = 100_000usize;
    let mut bias_std = vec![0.0f64; levels.len()];
    let mut bias_jump = vec![0.0f64; levels.len()];
    for (k, &s) in seeds.iter().enumerate() {
        let xs = spec.generate(batches * batch_size, s).unwrap();
        let mut std = Reservoir::with_mode(m, CounterRng::derive_seed(s, 1), SamplingMode::Standard)
            .unwrap();
        let mut jump = Reservoir::with_mode(m, CounterRng::derive_seed(s, 2), SamplingMode::Jump)
            .unwrap();
        for &x in &xs {
            std.observe(x);
            jump.observe(x);
        }
        for (li, &alpha) in levels.iter().enumerate() {
            let e_std = std.estimate_quantile(alpha).unwrap() - alpha;
            let e_jump = jump.estimate_quantile(alpha).unwrap() - alpha;
            bias_std[li] += (e_std - bias_std[li]) / (k + 1) as f64;
            bias_jump[li] += (e_jump - bias_jump[li]) / (k + 1) as f64;
        }
    }
    for (li, &alpha) in levels.iter().enumerate() {
        println!(
            "criterion 4 reservoir alpha={alpha}: standard bias {:+.5} (gate |.| < 0.01), \
             jump bias {:+.5} (reported)",
            bias_std[li], bias_jump[li]
        );
        assert!(
            bias_std[li].abs() < 0.01,
            "reservoir bias at alpha={alpha} is {:+.5}, gate |.| < 0.01",
            bias_std[li]
        );
    }
    println!("criterion 4 (drift bias oracle): PASS");
}

// ---------------------------------------------------------------------------
// 5. Distribution recovery on clustered and spread stress streams.
// ---------------------------------------------------------------------------

/// Builds the order-statistics baseline's quantile table: running means of
/// per-batch order statistics at the interior levels, bracketed by the
/// stream extrema.
fn os_table(xs: &[f64], bins: usize, batch: usize) -> QuantileTable {
    let levels: Vec<f64> = (1..bins).map(|j| j as f64 / bins as f64).collect();
    let mut est = OrderStatsEstimator::new(&levels).unwrap();
    for chunk in xs.chunks(batch) {
        est.update(chunk).unwrap();
    }
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut bounds = Vec::with_capacity(bins + 1);
    bounds.push(lo);
    bounds.extend_from_slice(est.estimates());
    bounds.push(hi);
    QuantileTable::from_boundaries(bounds, 0).unwrap()
}

fn reservoir_table(xs: &[f64], bins: usize, m: usize, mode: SamplingMode, s: u64) -> QuantileTable {
    let mut r = Reservoir::with_mode(m, s, mode).unwrap();
    for &x in xs {
        r.observe(x);
    }
    let mut cache = TableCache::new(bins);
    cache.table_for(&r).unwrap().clone()
}

#[test]
fn criterion_05_distribution_recovery_on_stress_streams() {
    let (n, m, cells) = (1_000_000usize, 10_000usize, 100usize);
    let seeds: Vec<u64> = (0u64..5).map(|k| seed(500 + k)).collect();

    let mut ratios = Vec::new(); // (stream, mean kl_rs, kl_jrs, kl_os)
    for (name, spec) in [("clustered", clustered_preset()), ("spread", spread_preset())] {
        let truth = spec.truth(n).unwrap();
        let (mut kl_rs, mut kl_jrs, mut kl_os) = (0.0, 0.0, 0.0);
        for (k, &s) in seeds.iter().enumerate() {
            let xs = spec.generate(n, s).unwrap();
            let rs = reservoir_table(&xs, cells, m, SamplingMode::Standard, s ^ 0x1);
            let jrs = reservoir_table(&xs, cells, m, SamplingMode::Jump, s ^ 0x2);
            let os = os_table(&xs, cells, m);
            let a = kl_divergence_binned(&truth, &rs, cells).unwrap();
            let b = kl_divergence_binned(&truth, &jrs, cells).unwrap();
            let c = kl_divergence_binned(&truth, &os, cells).unwrap();
            println!(
                "criterion 5 {name} seed {k}: KL(RS) = {a:.5}, KL(JRS) = {b:.5}, KL(OS) = {c:.5}"
            );
            kl_rs += a / seeds.len() as f64;
            kl_jrs += b / seeds.len() as f64;
            kl_os += c / seeds.len() as f64;
        }
        ratios.push((name, kl_rs, kl_jrs, kl_os));
    }

    let clustered = ratios[0];
    let spread = ratios[1];
    println!(
        "criterion 5 (stress streams): gates clustered OS/RS >= 100, OS/JRS >= 100; spread \
         OS worse than both but closer — clustered ({:.5}, {:.5}, {:.5}), spread \
         ({:.5}, {:.5}, {:.5})",
        clustered.1, clustered.2, clustered.3, spread.1, spread.2, spread.3
    );
    assert!(
        clustered.3 >= 100.0 * clustered.1,
        "clustered: KL(OS) {:.5} not >= 100x KL(RS) {:.5}",
        clustered.3,
        clustered.1
    );
    assert!(
        clustered.3 >= 100.0 * clustered.2,
        "clustered: KL(OS) {:.5} not >= 100x KL(JRS) {:.5}",
        clustered.3,
        clustered.2
    );
    assert!(
        spread.3 > spread.1 && spread.3 > spread.2,
        "spread: OS must still be worse than both reservoir tables"
    );
    let clustered_ratio = clustered.3 / clustered.1.max(f64::MIN_POSITIVE);
    let spread_ratio = spread.3 / spread.1.max(f64::MIN_POSITIVE);
    assert!(
        spread_ratio < clustered_ratio,
        "spread ratio {spread_ratio:.1} should be smaller than clustered {clustered_ratio:.1}"
    );
}

// ---------------------------------------------------------------------------
// 6. Analytic gradients vs central finite differences, 100 random configs.
// ---------------------------------------------------------------------------

/// Relative error below 1e-4, plus an absolute escape of 1e-9 so that
/// coordinates at the central-difference roundoff floor (|loss| * ulp / step
/// ~ 1e-10 here) are held to an absolute tolerance instead of amplifying
/// finite-difference noise into a spurious relative error.
fn fd_close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-9 + 1e-4 * analytic.abs().max(numeric.abs())
}

/// Scalar probe loss `sum_i upstream[i] * out[i]` for vector-valued ops.
fn probe_modulation(
    kind: ModulationKind,
    rng: &mut CounterRng,
) -> (usize, usize) {
    let bins = (2 + rng.next_index(5)) as usize;
    let fdim = (1 + rng.next_index(4)) as usize;
    let beta = rng.next_f64();
    let modulation = FieldModulation::init(kind, bins, fdim, beta, rng).unwrap();
    let v: Vec<f64> = (0..bins).map(|_| rng.next_gaussian()).collect();
    let field: Vec<f64> = (0..fdim).map(|_| rng.next_gaussian()).collect();
    let upstream: Vec<f64> = (0..bins).map(|_| rng.next_gaussian()).collect();

    let loss = |modulation: &FieldModulation, v: &[f64], field: &[f64]| -> f64 {
        let (out, _) = modulation.modulate(v, field).unwrap();
        out.iter().zip(&upstream).map(|(o, u)| o * u).sum()
    };
    let (_, cache) = modulation.modulate(&v, &field).unwrap();
    let grads = modulation.modulate_backward(&upstream, &cache).unwrap();

    let eps = 1e-6;
    let mut checked = 0usize;
    // Parameter matrix coordinates.
    let (rows, cols, analytic_w) = match (&modulation, &grads.w_tran, &grads.w_gate) {
        (FieldModulation::Affine { w_tran, .. }, Some(g), _) => {
            (w_tran.rows(), w_tran.cols(), g.clone())
        }
        (FieldModulation::Gating { w_gate, .. }, _, Some(g)) => {
            (w_gate.rows(), w_gate.cols(), g.clone())
        }
        _ => unreachable!("probe only builds parameterized kinds"),
    };
    for i in 0..rows {
        for j in 0..cols {
            let bump = |delta: f64| -> f64 {
                let mut alt = modulation.clone();
                match &mut alt {
                    FieldModulation::Affine { w_tran, .. } => {
                        w_tran.set(i, j, w_tran.get(i, j) + delta)
                    }
                    FieldModulation::Gating { w_gate, .. } => {
                        w_gate.set(i, j, w_gate.get(i, j) + delta)
                    }
                    FieldModulation::None => unreachable!(),
                }
                loss(&alt, &v, &field)
            };
            let numeric = (bump(eps) - bump(-eps)) / (2.0 * eps);
            assert!(
                fd_close(analytic_w.get(i, j), numeric),
                "{kind:?} w[{i}][{j}]: analytic {} vs numeric {numeric}",
                analytic_w.get(i, j)
            );
            checked += 1;
        }
    }
    // Field and input coordinates.
    for j in 0..fdim {
        let mut f2 = field.clone();
        f2[j] += eps;
        let mut f3 = field.clone();
        f3[j] -= eps;
        let numeric = (loss(&modulation, &v, &f2) - loss(&modulation, &v, &f3)) / (2.0 * eps);
        assert!(fd_close(grads.field[j], numeric), "{kind:?} field[{j}]");
        checked += 1;
    }
    for j in 0..bins {
        let mut v2 = v.clone();
        v2[j] += eps;
        let mut v3 = v.clone();
        v3[j] -= eps;
        let numeric = (loss(&modulation, &v2, &field) - loss(&modulation, &v3, &field)) / (2.0 * eps);
        assert!(fd_close(grads.input[j], numeric), "{kind:?} input[{j}]");
        checked += 1;
    }
    (bins, checked)
}

fn probe_aggregation(rng: &mut CounterRng) -> usize {
    let bins = (2 + rng.next_index(6)) as usize;
    let dim = (1 + rng.next_index(5)) as usize;
    let table = init_meta_embeddings(bins, dim, rng);
    let weights: Vec<f64> = (0..bins).map(|_| rng.next_gaussian()).collect();
    let upstream: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
    let loss = |table: &streambed::tensor::Matrix, weights: &[f64]| -> f64 {
        aggregate(weights, table)
            .unwrap()
            .iter()
            .zip(&upstream)
            .map(|(o, u)| o * u)
            .sum()
    };
    let (dtable, dweights) = aggregate_backward(&upstream, &weights, &table).unwrap();
    let eps = 1e-6;
    let mut checked = 0;
    for i in 0..bins {
        for j in 0..dim {
            let mut plus = table.clone();
            plus.set(i, j, table.get(i, j) + eps);
            let mut minus = table.clone();
            minus.set(i, j, table.get(i, j) - eps);
            let numeric = (loss(&plus, &weights) - loss(&minus, &weights)) / (2.0 * eps);
            assert!(fd_close(dtable.get(i, j), numeric), "table[{i}][{j}]");
            checked += 1;
        }
        let mut w2 = weights.clone();
        w2[i] += eps;
        let mut w3 = weights.clone();
        w3[i] -= eps;
        let numeric = (loss(&table, &w2) - loss(&table, &w3)) / (2.0 * eps);
        assert!(fd_close(dweights[i], numeric), "weights[{i}]");
        checked += 1;
    }
    checked
}

fn probe_full_model(config_ix: usize, rng: &mut CounterRng) -> usize {
    let encoders = [
        EncoderKind::QuantileThermometer,
        EncoderKind::ValueSpace,
        EncoderKind::RawScalar,
    ];
    let modulations = [ModulationKind::Gating, ModulationKind::Affine, ModulationKind::None];
    let config = ModelConfig {
        embedding_dim: (2 + rng.next_index(3)) as usize,
        bins: (3 + rng.next_index(3)) as usize,
        reservoir_capacity: 64,
        sampling_mode: SamplingMode::Jump,
        beta: rng.next_f64(),
        modulation: modulations[config_ix % 3],
        encoder: encoders[(config_ix / 3) % 3],
        hidden: vec![(3 + rng.next_index(4)) as usize],
        learning_rate: 0.05,
        l2_lambda: 1e-4,
        batch_size: 8,
        optimizer: OptimizerKind::Sgd,
        seed: rng.next_u64(),
    };
    let schema = StreamSchema {
        numeric_fields: vec!["x0".into(), "x1".into()],
        categorical: vec![
            CatFieldSpec { name: "c0".into(), cardinality: 3, modulating: true },
            CatFieldSpec { name: "c1".into(), cardinality: 2, modulating: false },
        ],
    };
    let mut t = Trainer::new(config, schema).unwrap();
    let warm: Vec<Sample> = (0..64)
        .map(|_| Sample {
            categorical: vec![rng.next_index(3) as u32, rng.next_index(2) as u32],
            numerical: vec![rng.next_f64() * 4.0, rng.next_gaussian()],
            label: rng.next_f64() < 0.5,
        })
        .collect();
    t.train_batch(&warm).unwrap();
    let batch: Vec<Sample> = (0..6)
        .map(|_| Sample {
            categorical: vec![rng.next_index(3) as u32, rng.next_index(2) as u32],
            numerical: vec![rng.next_f64() * 4.0, rng.next_gaussian()],
            label: rng.next_f64() < 0.5,
        })
        .collect();

    let (_, gvec) = t.loss_and_grad(&batch).unwrap();
    let params = t.param_vec();
    let eps = 1e-6;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus[i] += eps;
        t.load_param_vec(&plus).unwrap();
        let (lp, _) = t.loss_and_grad(&batch).unwrap();
        let mut minus = params.clone();
        minus[i] -= eps;
        t.load_param_vec(&minus).unwrap();
        let (lm, _) = t.loss_and_grad(&batch).unwrap();
        t.load_param_vec(&params).unwrap();
        let numeric = (lp - lm) / (2.0 * eps);
        assert!(
            fd_close(gvec[i], numeric),
            "full model config {config_ix} param {i}: analytic {} vs numeric {numeric}",
            gvec[i]
        );
    }
    params.len()
}

#[test]
fn criterion_06_gradients_match_finite_differences() {
    let mut rng = CounterRng::new(seed(600));
    let mut configs = 0usize;
    let mut coords = 0usize;
    for _ in 0..25 {
        coords += probe_modulation(ModulationKind::Affine, &mut rng).1;
        configs += 1;
    }
    for _ in 0..25 {
        coords += probe_modulation(ModulationKind::Gating, &mut rng).1;
        configs += 1;
    }
    for _ in 0..25 {
        coords += probe_aggregation(&mut rng);
        configs += 1;
    }
    for k in 0..25 {
        coords += probe_full_model(k, &mut rng);
        configs += 1;
    }
    println!(
        "criterion 6 (gradient checks): PASS — {configs} random configurations, \
         {coords} coordinates, central differences at 1e-6, rel err < 1e-4"
    );
    assert_eq!(configs, 100);
}

// ---------------------------------------------------------------------------
// 7. Encoding properties: monotonicity, boundary continuity, the distance
//    worked example, and calibration on a stationary stream.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_encoding_properties() {
    let mut rng = CounterRng::new(seed(700));

    // Monotonicity over 10^4 random tables, two ordered probes each.
    for _ in 0..10_000 {
        let bins = (2 + rng.next_index(10)) as usize;
        let mut bounds: Vec<f64> = (0..=bins)
            .map(|_| (rng.next_f64() - 0.3) * 50.0)
            .collect();
        bounds.sort_by(f64::total_cmp);
        if rng.next_f64() < 0.2 {
            // Inject a tie to cover degenerate bins.
            let i = (1 + rng.next_index(bins as u64 - 1)) as usize;
            bounds[i] = bounds[i - 1];
        }
        let table = QuantileTable::from_boundaries(bounds.clone(), 0).unwrap();
        let span = bounds[bins] - bounds[0] + 1.0;
        let mut xs = [
            bounds[0] - span * 0.1 + rng.next_f64() * span * 1.2,
            bounds[0] - span * 0.1 + rng.next_f64() * span * 1.2,
        ];
        xs.sort_by(f64::total_cmp);
        let lo = encode(xs[0], &table).unwrap();
        let hi = encode(xs[1], &table).unwrap();
        assert!(
            lo.quantile_position() <= hi.quantile_position() + 1e-15,
            "position must be monotone in x"
        );
        for (a, b) in lo.weights().iter().zip(hi.weights()) {
            assert!(a <= &(b + 1e-15), "thermometer weights must be monotone");
        }
    }

    // Continuity across interior boundaries of non-degenerate tables.
    let mut continuity_checks = 0usize;
    while continuity_checks < 2_000 {
        let bins = (2 + rng.next_index(8)) as usize;
        let mut bounds: Vec<f64> = (0..=bins).map(|_| rng.next_f64() * 20.0).collect();
        bounds.sort_by(f64::total_cmp);
        let j = (1 + rng.next_index(bins as u64 - 1)) as usize;
        let gap = bounds[j] - bounds[j - 1];
        if gap < 1e-3 {
            continue;
        }
        let table = QuantileTable::from_boundaries(bounds.clone(), 0).unwrap();
        let left = bounds[j] - gap * 1e-11;
        if left >= bounds[j] {
            continue;
        }
        let at = encode(bounds[j], &table).unwrap().quantile_position();
        let before = encode(left, &table).unwrap().quantile_position();
        assert!(
            (at - before).abs() < 1e-10,
            "discontinuity {:.2e} at boundary {j}",
            (at - before).abs()
        );
        continuity_checks += 1;
    }

    // Worked distance example: boundaries [0, 100, 105], x = 95.
    let table = QuantileTable::from_boundaries(vec![0.0, 100.0, 105.0], 0).unwrap();
    let distances = encode_value_space(95.0, &table).unwrap();
    assert_eq!(distances, vec![95.0, 5.0, 10.0]);

    // Calibration: the encoded quantile position of fresh draws matches the
    // true CDF on a stationary uniform stream.
    let spec = StreamSpec::StationaryUniform { a: 0.0, b: 1.0 };
    let xs = spec.generate(100_000, seed(701)).unwrap();
    let mut r = Reservoir::with_mode(10_000, seed(702), SamplingMode::Jump).unwrap();
    for &x in &xs {
        r.observe(x);
    }
    let mut cache = TableCache::new(10);
    let table = cache.table_for(&r).unwrap();
    let mut worst = 0.0f64;
    for k in 0..=1_000 {
        let x = k as f64 / 1_000.0;
        let pos = encode(x, table).unwrap().quantile_position();
        worst = worst.max((pos - x).abs());
    }
    println!(
        "criterion 7 (encoding properties): PASS — 10^4 monotone tables, \
         {continuity_checks} boundary continuity checks < 1e-10, distance example asserted, \
         calibration max error {worst:.4} < 0.03"
    );
    assert!(worst < 0.03, "calibration error {worst:.4} >= 0.03");
}

// ---------------------------------------------------------------------------
// 8. Quantile-space vs value-space encoding, and modulation on vs off, on a
//    category-conditional stream.
// ---------------------------------------------------------------------------

/// Ten categories whose value windows overlap at very different scales and
/// whose position-to-label slopes alternate in sign, emitting four numeric
/// fields of which only `category % 4` is label-linked — the rest are fresh
/// draws from the same window. Category-conditional quantile position is
/// what the label responds to (so value-space encoding is handicapped), and
/// which *field* carries it is a pure category-by-field interaction (which
/// modulation expresses directly).
fn conditional_stream() -> StreamSpec {
    use streambed::streamlab::CategorySpec;
    StreamSpec::FieldConditional {
        categories: vec![
            CategorySpec { weight: 0.1, lo: 0.0, hi: 1.0, slope: 4.0 },
            CategorySpec { weight: 0.1, lo: 0.0, hi: 10.0, slope: -4.0 },
            CategorySpec { weight: 0.1, lo: 0.5, hi: 2.0, slope: -4.0 },
            CategorySpec { weight: 0.1, lo: 5.0, hi: 20.0, slope: 4.0 },
            CategorySpec { weight: 0.1, lo: 0.0, hi: 50.0, slope: -4.0 },
            CategorySpec { weight: 0.1, lo: 1.0, hi: 3.0, slope: 4.0 },
            CategorySpec { weight: 0.1, lo: 0.0, hi: 5.0, slope: 4.0 },
            CategorySpec { weight: 0.1, lo: 10.0, hi: 30.0, slope: -4.0 },
            CategorySpec { weight: 0.1, lo: 0.2, hi: 0.8, slope: -4.0 },
            CategorySpec { weight: 0.1, lo: 3.0, hi: 8.0, slope: 4.0 },
        ],
        active_fields: 4,
    }
}

fn conditional_schema() -> StreamSchema {
    StreamSchema {
        numeric_fields: (0..4).map(|k| format!("x{k}")).collect(),
        categorical: vec![CatFieldSpec {
            name: "segment".into(),
            cardinality: 10,
            modulating: true,
        }],
    }
}

fn train_auc(encoder: EncoderKind, beta: f64, stream_seed: u64, model_seed: u64) -> f64 {
    let config = ModelConfig {
        embedding_dim: 8,
        bins: 10,
        reservoir_capacity: 10_000,
        sampling_mode: SamplingMode::Jump,
        beta,
        modulation: ModulationKind::Gating,
        encoder,
        hidden: vec![16, 8],
        learning_rate: 0.003,
        l2_lambda: 1e-6,
        batch_size: 256,
        optimizer: OptimizerKind::Adam,
        seed: model_seed,
    };
    let samples = conditional_stream().generate_labeled(60_000, stream_seed).unwrap();
    let mut t = Trainer::new(config, conditional_schema()).unwrap();
    let report = t.train_stream(&samples, 0.2, 1_000_000).unwrap();
    report.final_metrics.auc
}

#[test]
fn criterion_08_encoding_and_modulation_improve_ranking() {
    let seeds: Vec<u64> = (0u64..5).map(|k| seed(800 + k)).collect();
    let mut enc_wins = 0usize;
    let mut beta_wins = 0usize;
    for (k, &s) in seeds.iter().enumerate() {
        let model_seed = seed(850 + k as u64);
        let quantile = train_auc(EncoderKind::QuantileThermometer, 0.5, s, model_seed);
        let value = train_auc(EncoderKind::ValueSpace, 0.5, s, model_seed);
        let no_mod = train_auc(EncoderKind::QuantileThermometer, 0.0, s, model_seed);
        println!(
            "criterion 8 seed {k}: quantile {quantile:.4}, value-space {value:.4}, \
             beta=0 {no_mod:.4}"
        );
        enc_wins += usize::from(quantile > value);
        beta_wins += usize::from(quantile > no_mod);
    }
    println!(
        "criterion 8 (ranking gains): gates 5/5 paired wins both comparisons — \
         encoder wins {enc_wins}/5, modulation wins {beta_wins}/5 \
         (one-sided sign test p = {:.4} at 5/5)",
        0.5f64.powi(5)
    );
    assert_eq!(
        enc_wins, 5,
        "quantile-space encoding must beat value-space on every seed"
    );
    assert_eq!(
        beta_wins, 5,
        "beta=0.5 gating must beat beta=0 on every seed (sign test p = 0.03125 < 0.05)"
    );
}

// ---------------------------------------------------------------------------
// 9. Drift diagnostics: exact zeros on identical data, periodicity
//    recovered from the PSI/KS series.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_drift_diagnostics() {
    // Identical segments: both statistics exactly zero.
    let xs = StreamSpec::StationaryUniform { a: 0.0, b: 1.0 }
        .generate(20_000, seed(900))
        .unwrap();
    let segment = &xs[..10_000];
    assert_eq!(psi(segment, segment, 10).unwrap(), 0.0);
    let ks = ks_two_sample(segment, segment).unwrap();
    assert_eq!(ks.statistic, 0.0);
    assert_eq!(ks.p_value, 1.0);

    // Periodic shift: the drift-score series against segment 0 must peak in
    // autocorrelation exactly at the generator period. Three phases give the
    // offset pattern (0, +, -) whose distance series has no half-period
    // symmetry: distribution distances are even in the shift direction, so an
    // even number of sinusoid phases would alias the series to period/2.
    let period = 5_000usize;
    let segment_len = 500usize;
    let spec = StreamSpec::PeriodicShift {
        a: 0.0,
        b: 1.0,
        amplitude: 0.6,
        period,
        phases: 3,
    };
    let stream = spec.generate(100_000, seed(901)).unwrap();
    let segments = stream.len() / segment_len;
    let report = drift_report(&stream, segments, 10).unwrap();
    let expected_lag = period / segment_len;
    let max_lag = 3 * expected_lag;

    let psi_acf = autocorrelation(&report.psi, max_lag).unwrap();
    let psi_peak = (1..=max_lag)
        .max_by(|&a, &b| psi_acf[a].total_cmp(&psi_acf[b]))
        .unwrap();
    let ks_acf = autocorrelation(&report.ks_statistic, max_lag).unwrap();
    let ks_peak = (1..=max_lag)
        .max_by(|&a, &b| ks_acf[a].total_cmp(&ks_acf[b]))
        .unwrap();
    println!(
        "criterion 9 (drift diagnostics): PASS — identical segments exactly zero; \
         PSI acf peak at lag {psi_peak} (r = {:.3}), KS acf peak at lag {ks_peak} \
         (r = {:.3}), configured period lag {expected_lag}",
        psi_acf[psi_peak], ks_acf[ks_peak]
    );
    assert_eq!(psi_peak, expected_lag, "PSI autocorrelation peak off period");
    assert_eq!(ks_peak, expected_lag, "KS autocorrelation peak off period");
}

// ---------------------------------------------------------------------------
// Shared sanity: the probability clamp used by training metrics.
// ---------------------------------------------------------------------------

#[test]
fn probability_clamp_is_symmetric_and_tight() {
    assert_eq!(PROB_EPS, 1e-7);
    assert!((1.0 - PROB_EPS) < 1.0);
}
