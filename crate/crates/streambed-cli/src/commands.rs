//! Implementations of the subcommands. Each one fans out over the seed list
//! with scoped threads, merges the per-seed results back in seed order, and
//! hands the assembled tables to [`crate::output::write_run`].

use std::fs;
use std::path::Path;
use std::thread;

use serde::Serialize;
use serde_json::Value;

use streambed::model::{load_csv, CatFieldSpec, ModelConfig, Sample, StreamSchema, Trainer};
use streambed::quantile::{build_table, encode};
use streambed::reservoir::Reservoir;
use streambed::streamlab::stats::{drift_report, drifting_uniform_bias};
use streambed::streamlab::{clustered_preset, CategorySpec, StreamSpec};

use crate::output::{fmt_f64, resolve_out, write_run, Table};
use crate::{
    BiasArgs, CliError, DriftArgs, EncodeDemoArgs, EstimateArgs, ModelArgs, SweepBetaArgs,
    TrainArgs,
};

/// Runs `work(seed)` on one scoped thread per seed and collects the results
/// in seed order, so output never depends on scheduling.
fn fan_out<T, F>(seeds: &[u64], work: F) -> Result<Vec<T>, CliError>
where
    T: Send,
    F: Fn(u64) -> Result<T, CliError> + Sync,
{
    thread::scope(|scope| {
        let work = &work;
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| scope.spawn(move || work(seed)))
            .collect();
        handles
            .into_iter()
            .map(|handle| handle.join().expect("seed worker panicked"))
            .collect()
    })
}

/// Loads a stream spec from JSON, or falls back to the given default.
fn load_spec(path: Option<&Path>, default: fn() -> StreamSpec) -> Result<StreamSpec, CliError> {
    match path {
        None => Ok(default()),
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let spec: StreamSpec = serde_json::from_str(&text)?;
            spec.validate()?;
            Ok(spec)
        }
    }
}

/// Built-in labeled stream for `train` demos: two categories whose label
/// logits run in opposite directions over value windows of very different
/// scales, so quantile-space encodings have something real to gain.
fn demo_labeled_spec() -> StreamSpec {
    StreamSpec::FieldConditional {
        categories: vec![
            CategorySpec {
                weight: 0.4,
                lo: 0.0,
                hi: 1.0,
                slope: 4.0,
            },
            CategorySpec {
                weight: 0.6,
                lo: 0.0,
                hi: 8.0,
                slope: -4.0,
            },
        ],
        active_fields: 1,
    }
}

/// Built-in drifting stream for `drift` demos: a uniform window whose
/// location steps through three phase offsets once per period.
fn default_periodic() -> StreamSpec {
    StreamSpec::PeriodicShift {
        a: 0.0,
        b: 1.0,
        amplitude: 0.6,
        period: 5_000,
        phases: 3,
    }
}

/// Derives the training schema from a labeled spec: one numeric field per
/// generated column plus the category id as a modulating field.
fn schema_for(spec: &StreamSpec) -> Result<StreamSchema, CliError> {
    match spec {
        StreamSpec::FieldConditional { .. } => Ok(StreamSchema {
            numeric_fields: (0..spec.numeric_field_count())
                .map(|i| format!("x{i}"))
                .collect(),
            categorical: vec![CatFieldSpec {
                name: "segment".into(),
                cardinality: spec.category_count() as u32,
                modulating: true,
            }],
        }),
        _ => Err(CliError::Usage(
            "this stream spec carries no labels; train needs a field_conditional spec or --data"
                .into(),
        )),
    }
}

/// Effective model settings: defaults, overlaid by the `--config` JSON file,
/// overlaid by explicit flags. Unknown file keys are rejected rather than
/// silently dropped.
pub fn merge_config(args: &ModelArgs) -> Result<ModelConfig, CliError> {
    let mut base = match serde_json::to_value(ModelConfig::default())? {
        Value::Object(map) => map,
        _ => unreachable!("model config serializes to an object"),
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)?;
        let overlay: Value = serde_json::from_str(&text)?;
        let Value::Object(overlay) = overlay else {
            return Err(CliError::Usage(format!(
                "{}: config file must be a JSON object",
                path.display()
            )));
        };
        for (key, value) in overlay {
            if !base.contains_key(&key) {
                return Err(CliError::Usage(format!(
                    "{}: unknown config key `{key}`",
                    path.display()
                )));
            }
            base.insert(key, value);
        }
    }
    let mut cfg: ModelConfig = serde_json::from_value(Value::Object(base))?;
    if let Some(d) = args.embedding_dim {
        cfg.embedding_dim = d;
    }
    if let Some(b) = args.bins {
        cfg.bins = b;
    }
    if let Some(c) = args.capacity {
        cfg.reservoir_capacity = c;
    }
    if let Some(mode) = args.mode {
        cfg.sampling_mode = mode.to_lib();
    }
    if let Some(beta) = args.beta {
        cfg.beta = beta;
    }
    if let Some(m) = args.modulation {
        cfg.modulation = m.to_lib();
    }
    if let Some(e) = args.encoder {
        cfg.encoder = e.to_lib();
    }
    if let Some(h) = &args.hidden {
        cfg.hidden = parse_hidden(h)?;
    }
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(l2) = args.l2 {
        cfg.l2_lambda = l2;
    }
    if let Some(b) = args.batch_size {
        cfg.batch_size = b;
    }
    if let Some(opt) = args.optimizer {
        cfg.optimizer = opt.to_lib();
    }
    Ok(cfg)
}

fn parse_hidden(text: &str) -> Result<Vec<usize>, CliError> {
    let mut widths = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        widths.push(part.parse::<usize>().map_err(|e| {
            CliError::Usage(format!("bad hidden width `{part}`: {e}"))
        })?);
    }
    Ok(widths)
}

pub fn estimate(args: EstimateArgs) -> Result<(), CliError> {
    let spec = load_spec(args.stream.as_deref(), clustered_preset)?;
    let seeds = &args.io.seeds.0;
    let levels = &args.levels.0;
    let mode = args.mode.to_lib();
    let per_seed = fan_out(seeds, |seed| {
        let xs = spec.generate(args.len, seed)?;
        let mut reservoir = Reservoir::with_mode(args.capacity, seed, mode)?;
        reservoir.observe_all(&xs);
        let mut rows = Vec::new();
        for &level in levels {
            let estimate = reservoir.estimate_quantile(level)?;
            rows.push(vec![
                seed.to_string(),
                fmt_f64(level),
                fmt_f64(estimate),
                reservoir.writes().to_string(),
                reservoir.rng_calls().to_string(),
            ]);
        }
        Ok(rows)
    })?;

    let mut table = Table::new(
        "estimate",
        &["seed", "level", "estimate", "writes", "rng_calls"],
    );
    for rows in per_seed {
        for row in rows {
            table.push(row);
        }
    }

    #[derive(Serialize)]
    struct Echo<'a> {
        stream: &'a StreamSpec,
        len: usize,
        capacity: usize,
        mode: &'static str,
        levels: &'a [f64],
    }
    let echo = serde_json::to_value(Echo {
        stream: &spec,
        len: args.len,
        capacity: args.capacity,
        mode: args.mode.name(),
        levels,
    })?;
    write_run(&resolve_out(args.io.out), "estimate", seeds, &echo, &[table])
}

pub fn bias(args: BiasArgs) -> Result<(), CliError> {
    let seeds = &args.io.seeds.0;
    let mut table = Table::new(
        "bias",
        &["level", "empirical_bias", "closed_form_bias", "gap"],
    );
    for &level in &args.levels.0 {
        let report = drifting_uniform_bias(
            level,
            args.lo,
            args.hi,
            args.batches,
            args.batch_size,
            seeds,
        )?;
        table.push(vec![
            fmt_f64(level),
            fmt_f64(report.empirical_bias),
            fmt_f64(report.closed_form_bias),
            fmt_f64(report.empirical_bias - report.closed_form_bias),
        ]);
    }

    #[derive(Serialize)]
    struct Echo<'a> {
        levels: &'a [f64],
        lo: f64,
        hi: f64,
        batches: usize,
        batch_size: usize,
    }
    let echo = serde_json::to_value(Echo {
        levels: &args.levels.0,
        lo: args.lo,
        hi: args.hi,
        batches: args.batches,
        batch_size: args.batch_size,
    })?;
    write_run(&resolve_out(args.io.out), "bias", seeds, &echo, &[table])
}

/// Trajectory and final metrics of one training run.
struct TrainRun {
    trajectory: Vec<(u64, f64, f64)>,
    final_step: u64,
    final_auc: f64,
    final_logloss: f64,
}

fn run_train(
    cfg: &ModelConfig,
    seed: u64,
    schema: &StreamSchema,
    samples: &[Sample],
    holdout: f64,
    eval_every: usize,
) -> Result<TrainRun, CliError> {
    let mut cfg = cfg.clone();
    cfg.seed = seed;
    let mut trainer = Trainer::new(cfg, schema.clone())?;
    let report = trainer.train_stream(samples, holdout, eval_every)?;
    Ok(TrainRun {
        trajectory: report
            .trajectory
            .iter()
            .map(|p| (p.step, p.metrics.auc, p.metrics.logloss))
            .collect(),
        final_step: trainer.steps(),
        final_auc: report.final_metrics.auc,
        final_logloss: report.final_metrics.logloss,
    })
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = merge_config(&args.model)?;
    let seeds = &args.io.seeds.0;
    let (source_echo, runs) = match &args.data {
        Some(path) => {
            let (schema, samples) = load_csv(path)?;
            let runs = fan_out(seeds, |seed| {
                run_train(&cfg, seed, &schema, &samples, args.holdout, args.eval_every)
            })?;
            (serde_json::json!({ "data": path.display().to_string() }), runs)
        }
        None => {
            let spec = load_spec(args.stream.as_deref(), demo_labeled_spec)?;
            let schema = schema_for(&spec)?;
            let runs = fan_out(seeds, |seed| {
                let samples = spec.generate_labeled(args.len, seed)?;
                run_train(&cfg, seed, &schema, &samples, args.holdout, args.eval_every)
            })?;
            (serde_json::to_value(&spec)?, runs)
        }
    };

    let mut table = Table::new("train", &["seed", "phase", "step", "auc", "logloss"]);
    for (seed, run) in seeds.iter().zip(&runs) {
        for &(step, auc, logloss) in &run.trajectory {
            table.push(vec![
                seed.to_string(),
                "trajectory".into(),
                step.to_string(),
                fmt_f64(auc),
                fmt_f64(logloss),
            ]);
        }
        table.push(vec![
            seed.to_string(),
            "final".into(),
            run.final_step.to_string(),
            fmt_f64(run.final_auc),
            fmt_f64(run.final_logloss),
        ]);
    }

    #[derive(Serialize)]
    struct Echo<'a> {
        source: Value,
        len: Option<usize>,
        holdout: f64,
        eval_every: usize,
        model: &'a ModelConfig,
    }
    let echo = serde_json::to_value(Echo {
        source: source_echo,
        len: args.data.is_none().then_some(args.len),
        holdout: args.holdout,
        eval_every: args.eval_every,
        model: &cfg,
    })?;
    write_run(&resolve_out(args.io.out), "train", seeds, &echo, &[table])
}

pub fn sweep_beta(args: SweepBetaArgs) -> Result<(), CliError> {
    if args.model.beta.is_some() {
        return Err(CliError::Usage(
            "sweep-beta sets beta from --betas; drop --beta".into(),
        ));
    }
    let cfg = merge_config(&args.model)?;
    let seeds = &args.io.seeds.0;
    let betas = &args.betas.0;
    // Finals only: one evaluation interval larger than any run.
    let eval_every = 1_000_000;

    let per_seed: Vec<Vec<TrainRun>> = match &args.data {
        Some(path) => {
            let (schema, samples) = load_csv(path)?;
            fan_out(seeds, |seed| {
                betas
                    .iter()
                    .map(|&beta| {
                        let mut cfg = cfg.clone();
                        cfg.beta = beta;
                        run_train(&cfg, seed, &schema, &samples, args.holdout, eval_every)
                    })
                    .collect()
            })?
        }
        None => {
            let spec = load_spec(args.stream.as_deref(), demo_labeled_spec)?;
            let schema = schema_for(&spec)?;
            fan_out(seeds, |seed| {
                // One stream per seed, shared across the grid, so every beta
                // sees identical data and the comparison is paired.
                let samples = spec.generate_labeled(args.len, seed)?;
                betas
                    .iter()
                    .map(|&beta| {
                        let mut cfg = cfg.clone();
                        cfg.beta = beta;
                        run_train(&cfg, seed, &schema, &samples, args.holdout, eval_every)
                    })
                    .collect()
            })?
        }
    };

    let mut table = Table::new("sweep-beta", &["beta", "seed", "auc", "logloss"]);
    for (bi, &beta) in betas.iter().enumerate() {
        for (si, &seed) in seeds.iter().enumerate() {
            let run = &per_seed[si][bi];
            table.push(vec![
                fmt_f64(beta),
                seed.to_string(),
                fmt_f64(run.final_auc),
                fmt_f64(run.final_logloss),
            ]);
        }
    }

    #[derive(Serialize)]
    struct Echo<'a> {
        betas: &'a [f64],
        len: Option<usize>,
        holdout: f64,
        model: &'a ModelConfig,
    }
    let echo = serde_json::to_value(Echo {
        betas,
        len: args.data.is_none().then_some(args.len),
        holdout: args.holdout,
        model: &cfg,
    })?;
    write_run(&resolve_out(args.io.out), "sweep-beta", seeds, &echo, &[table])
}

pub fn drift(args: DriftArgs) -> Result<(), CliError> {
    let spec = load_spec(args.stream.as_deref(), default_periodic)?;
    let seeds = &args.io.seeds.0;
    let per_seed = fan_out(seeds, |seed| {
        let xs = spec.generate(args.len, seed)?;
        Ok(drift_report(&xs, args.segments, args.cells)?)
    })?;

    let mut table = Table::new(
        "drift",
        &["seed", "segment", "psi", "ks_statistic", "ks_p_value"],
    );
    for (seed, report) in seeds.iter().zip(&per_seed) {
        for s in 0..report.psi.len() {
            table.push(vec![
                seed.to_string(),
                s.to_string(),
                fmt_f64(report.psi[s]),
                fmt_f64(report.ks_statistic[s]),
                fmt_f64(report.ks_p_value[s]),
            ]);
        }
    }

    #[derive(Serialize)]
    struct Echo<'a> {
        stream: &'a StreamSpec,
        len: usize,
        segments: usize,
        cells: usize,
    }
    let echo = serde_json::to_value(Echo {
        stream: &spec,
        len: args.len,
        segments: args.segments,
        cells: args.cells,
    })?;
    write_run(&resolve_out(args.io.out), "drift", seeds, &echo, &[table])
}

pub fn encode_demo(args: EncodeDemoArgs) -> Result<(), CliError> {
    let spec = load_spec(args.stream.as_deref(), clustered_preset)?;
    let seeds = &args.io.seeds.0;
    let mode = args.mode.to_lib();
    let probes: Vec<f64> = match &args.probes {
        Some(list) => list.0.clone(),
        None => {
            // Default probes: the stream's true interior deciles.
            let truth = spec.truth(args.len)?;
            (1..=9).map(|i| truth.quantile(f64::from(i) / 10.0)).collect()
        }
    };

    type SeedRows = (Vec<Vec<String>>, Vec<Vec<String>>);
    let per_seed: Vec<SeedRows> = fan_out(seeds, |seed| {
        let xs = spec.generate(args.len, seed)?;
        let mut reservoir = Reservoir::with_mode(args.capacity, seed, mode)?;
        reservoir.observe_all(&xs);
        let table = build_table(&reservoir.snapshot(), args.bins)?;
        let mut code_rows = Vec::new();
        for &x in &probes {
            let code = encode(x, &table)?;
            let mut row = vec![
                seed.to_string(),
                fmt_f64(x),
                code.bin_index().to_string(),
                fmt_f64(code.fraction()),
                fmt_f64(code.quantile_position()),
            ];
            row.extend(code.weights().iter().map(|&w| fmt_f64(w)));
            code_rows.push(row);
        }
        let boundary_rows = table
            .boundaries()
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                vec![
                    seed.to_string(),
                    fmt_f64(j as f64 / args.bins as f64),
                    fmt_f64(b),
                ]
            })
            .collect();
        Ok((code_rows, boundary_rows))
    })?;

    let mut header = vec![
        "seed".to_string(),
        "x".to_string(),
        "bin".to_string(),
        "fraction".to_string(),
        "position".to_string(),
    ];
    header.extend((0..args.bins).map(|j| format!("w{j}")));
    let mut codes = Table {
        stem: "encode-demo".into(),
        header,
        rows: Vec::new(),
    };
    let mut boundaries = Table::new("encode-demo-table", &["seed", "level", "boundary"]);
    for (code_rows, boundary_rows) in per_seed {
        for row in code_rows {
            codes.push(row);
        }
        for row in boundary_rows {
            boundaries.push(row);
        }
    }

    #[derive(Serialize)]
    struct Echo<'a> {
        stream: &'a StreamSpec,
        len: usize,
        capacity: usize,
        bins: usize,
        mode: &'static str,
        probes: &'a [f64],
    }
    let echo = serde_json::to_value(Echo {
        stream: &spec,
        len: args.len,
        capacity: args.capacity,
        bins: args.bins,
        mode: args.mode.name(),
        probes: &probes,
    })?;
    write_run(
        &resolve_out(args.io.out),
        "encode-demo",
        seeds,
        &echo,
        &[codes, boundaries],
    )
}
