//! Cross-module integration: reservoir -> table -> encoder -> trainer flows
//! exercised end to end, including regime shifts and checkpoint resume.

use streambed::model::{
    CatFieldSpec, ModelConfig, Sample, StreamSchema, Trainer,
};
use streambed::quantile::{encode, TableCache};
use streambed::reservoir::{Reservoir, SamplingMode};
use streambed::rng::CounterRng;
use streambed::streamlab::StreamSpec;

/// After a regime shift the reservoir keeps admitting new-regime samples at
/// rate m/t, so the implied CDF tracks the *pooled* stream; with a long
/// enough post-shift run the pooled mixture is dominated by the new regime
/// and the bulk quantiles (deciles) are rebuilt from recent data. The outer
/// table edges are extreme statistics and wash out far more slowly — a
/// handful of old-regime stragglers keeps the first bin stretched — so bulk
/// calibration and edge distortion are asserted separately.
#[test]
fn tables_adapt_to_a_regime_shift() {
    let m = 2_000usize;
    let bins = 10usize;
    let mut r = Reservoir::with_mode(m, 0xADA9, SamplingMode::Jump).unwrap();
    let mut cache = TableCache::new(bins);
    let mut rng = CounterRng::new(0xFEED);

    for _ in 0..10_000 {
        r.observe(rng.next_f64());
    }
    let new_cdf = |x: f64| ((x - 0.3) / 1.0).clamp(0.0, 1.0);
    let horizons = [10_000usize, 40_000, 150_000, 800_000];
    let mut bulk_last = f64::INFINITY;
    let mut edge_first = 0.0f64;
    let mut edge_last = 0.0f64;
    for (k, &h) in horizons.iter().enumerate() {
        let start = if k == 0 { 0 } else { horizons[k - 1] };
        for _ in start..h {
            r.observe(0.3 + rng.next_f64());
        }
        let table = cache.table_for(&r).unwrap();
        // Bulk: probes spanning the 10%..90% band of the new regime.
        let mut worst = 0.0f64;
        for j in 0..=200 {
            let x = 0.4 + 0.8 * j as f64 / 200.0;
            let pos = encode(x, table).unwrap().quantile_position();
            worst = worst.max((pos - new_cdf(x)).abs());
        }
        bulk_last = worst;
        // Edge: a probe just above the new minimum sits in the first bin,
        // whose left boundary old-regime stragglers keep too low.
        let edge = (encode(0.31, table).unwrap().quantile_position() - new_cdf(0.31)).abs();
        if k == 0 {
            edge_first = edge;
        }
        edge_last = edge;
    }
    assert!(
        bulk_last < 0.05,
        "post-shift bulk calibration error {bulk_last:.4} must fall below 0.05"
    );
    assert!(
        edge_last < edge_first,
        "edge distortion must decay as stragglers wash out: \
         {edge_first:.4} -> {edge_last:.4}"
    );
    assert!(cache.rebuilds() >= horizons.len() as u64, "tables must refresh");
}

fn labeled_stream(n: usize, seed: u64) -> Vec<Sample> {
    use streambed::streamlab::CategorySpec;
    StreamSpec::FieldConditional {
        categories: vec![
            CategorySpec { weight: 0.4, lo: 0.0, hi: 1.0, slope: 4.0 },
            CategorySpec { weight: 0.6, lo: 0.0, hi: 8.0, slope: -4.0 },
        ],
        active_fields: 1,
    }
    .generate_labeled(n, seed)
    .unwrap()
}

fn schema() -> StreamSchema {
    StreamSchema {
        numeric_fields: vec!["x".into()],
        categorical: vec![CatFieldSpec {
            name: "segment".into(),
            cardinality: 2,
            modulating: true,
        }],
    }
}

/// Training through a checkpoint must be indistinguishable from training
/// straight through: same predictions, and byte-identical re-checkpoints.
#[test]
fn checkpoint_resume_is_transparent() {
    let config = ModelConfig::default();
    let samples = labeled_stream(4_096, 0xC0DE);
    let (first, second) = samples.split_at(2_048);

    let mut straight = Trainer::new(config.clone(), schema()).unwrap();
    for chunk in first.chunks(256) {
        straight.train_batch(chunk).unwrap();
    }
    let checkpoint = straight.to_checkpoint_json().unwrap();
    for chunk in second.chunks(256) {
        straight.train_batch(chunk).unwrap();
    }

    let mut resumed = Trainer::from_checkpoint_json(&checkpoint).unwrap();
    for chunk in second.chunks(256) {
        resumed.train_batch(chunk).unwrap();
    }

    assert_eq!(
        straight.to_checkpoint_json().unwrap(),
        resumed.to_checkpoint_json().unwrap(),
        "resumed trainer must match the uninterrupted one byte for byte"
    );
    for s in &samples[..64] {
        assert_eq!(
            straight.predict(s).unwrap(),
            resumed.predict(s).unwrap(),
            "predictions must agree exactly after resume"
        );
    }
}

/// The full loop learns: held-out ranking quality ends clearly above chance
/// and loss ends below the no-information baseline.
#[test]
fn end_to_end_training_beats_chance() {
    let config = ModelConfig {
        seed: 11,
        ..ModelConfig::default()
    };
    let samples = labeled_stream(30_000, 0xBEEF);
    let mut t = Trainer::new(config, schema()).unwrap();
    let report = t.train_stream(&samples, 0.2, 4_000).unwrap();
    assert!(
        report.final_metrics.auc > 0.65,
        "held-out AUC {:.4} should be well above chance",
        report.final_metrics.auc
    );
    assert!(
        report.final_metrics.logloss < 0.69,
        "held-out logloss {:.4} should beat the coin-flip baseline",
        report.final_metrics.logloss
    );
    // The evaluation trajectory must be recorded in training order.
    assert!(!report.trajectory.is_empty());
    let steps: Vec<u64> = report.trajectory.iter().map(|p| p.step).collect();
    let mut sorted = steps.clone();
    sorted.sort_unstable();
    assert_eq!(steps, sorted);
}

/// Embeddings of a trained model respond to the numeric input: probes across
/// the field's range produce distinct, finite embedding vectors.
#[test]
fn numeric_embeddings_vary_over_the_range() {
    let samples = labeled_stream(8_192, 0xE44B);
    let mut t = Trainer::new(ModelConfig::default(), schema()).unwrap();
    for chunk in samples.chunks(256) {
        t.train_batch(chunk).unwrap();
    }
    let lo = t.embed_numeric(0, 0.05).unwrap();
    let hi = t.embed_numeric(0, 7.5).unwrap();
    assert!(lo.iter().all(|v| v.is_finite()));
    assert!(hi.iter().all(|v| v.is_finite()));
    let dist: f64 = lo
        .iter()
        .zip(&hi)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(dist > 1e-3, "distinct inputs should embed apart, got {dist:.2e}");
}
