//! Single-pass streaming trainer for binary prediction over mixed
//! categorical/numerical streams.
//!
//! Each numerical field owns a jump-mode reservoir whose quantile table is
//! refreshed lazily; values are encoded (thermometer, value-space distances,
//! or a raw learned direction), modulated by the embeddings of a configured
//! set of categorical fields, and aggregated into dense embeddings. The
//! concatenated field embeddings feed an MLP head trained with clamped
//! binary cross-entropy plus an L2 penalty on every learnable tensor.
//!
//! Every sample contributes to exactly one gradient step (single-pass
//! discipline, tracked by counters), and everything is deterministic in the
//! config seed: same config, same stream, bit-identical trajectory.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{self, Metrics, MetricsError, PROB_EPS};
use crate::modulation::{
    aggregate, aggregate_backward, init_meta_embeddings, sigmoid, FieldModulation,
    ModulationError, ModulationKind,
};
use crate::quantile::{encode, encode_value_space, CodecError, QuantileTable, TableCache};
use crate::reservoir::{Reservoir, ReservoirError, SamplingMode};
use crate::rng::CounterRng;
use crate::tensor::Matrix;

const TRAINER_CHECKPOINT_FORMAT: u32 = 1;

/// Errors from configuration, schema handling, training, and persistence.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("sample has {got} {what} fields, schema expects {expected}")]
    SchemaMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("category id {id} out of range for field {field} (cardinality {cardinality})")]
    CategoryOutOfRange { field: usize, id: u32, cardinality: u32 },
    #[error("numeric field {field} value is not finite")]
    NonFiniteFeature { field: usize },
    #[error("numeric field {field} reservoir holds {have} samples, need {need} to build a table")]
    NotWarmedUp { field: usize, have: usize, need: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("parameter vector has length {got}, model has {expected} parameters")]
    ParamLengthMismatch { expected: usize, got: usize },
    #[error("csv: {0}")]
    Csv(String),
    #[error("unsupported checkpoint format version {0}")]
    UnsupportedFormat(u32),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Modulation(#[from] ModulationError),
    #[error(transparent)]
    Reservoir(#[from] ReservoirError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// How a numerical value becomes an aggregation-weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Thermometer code over quantile-space bins (the full pipeline).
    QuantileThermometer,
    /// Distances to the table boundaries, standardized by the table span and
    /// passed through a learned linear map — the distance-based baseline.
    ValueSpace,
    /// `x` times a learned direction; no distributional information at all.
    RawScalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Training configuration; `Default` gives the desk-scale settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding dimension d for every field.
    pub embedding_dim: usize,
    /// Quantile bins M per numeric field.
    pub bins: usize,
    /// Reservoir capacity m per numeric field.
    pub reservoir_capacity: usize,
    /// Reservoir scheduling mode.
    pub sampling_mode: SamplingMode,
    /// Modulation mixing coefficient.
    pub beta: f64,
    pub modulation: ModulationKind,
    pub encoder: EncoderKind,
    /// Hidden layer widths of the MLP head.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_dim: 8,
            bins: 10,
            reservoir_capacity: 10_000,
            sampling_mode: SamplingMode::Jump,
            beta: 0.5,
            modulation: ModulationKind::Gating,
            encoder: EncoderKind::QuantileThermometer,
            hidden: vec![16, 8],
            learning_rate: 0.05,
            l2_lambda: 1e-6,
            batch_size: 256,
            optimizer: OptimizerKind::Sgd,
            seed: 7,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::BadConfig(msg.into()));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if self.bins < 2 {
            return bad("bins must be at least 2");
        }
        if self.reservoir_capacity < self.bins {
            return bad("reservoir_capacity must be at least bins");
        }
        if !(0.0..=1.0).contains(&self.beta) || self.beta.is_nan() {
            return bad("beta must lie in [0, 1]");
        }
        if self.batch_size < self.bins {
            // The first batch must warm the reservoir enough to build a table.
            return bad("batch_size must be at least bins");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.l2_lambda.is_finite() && self.l2_lambda >= 0.0) {
            return bad("l2_lambda must be finite and non-negative");
        }
        Ok(())
    }
}

/// One categorical field: id vocabulary size plus whether it conditions
/// numeric modulation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatFieldSpec {
    pub name: String,
    pub cardinality: u32,
    pub modulating: bool,
}

/// Field layout of a stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSchema {
    pub numeric_fields: Vec<String>,
    pub categorical: Vec<CatFieldSpec>,
}

impl StreamSchema {
    /// Indices of the modulating categorical fields, in schema order — the
    /// concatenation order of the conditioning embedding.
    pub fn modulating_fields(&self) -> Vec<usize> {
        self.categorical
            .iter()
            .enumerate()
            .filter(|(_, c)| c.modulating)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.numeric_fields.is_empty() && self.categorical.is_empty() {
            return Err(ModelError::BadConfig("schema has no fields".into()));
        }
        if self.categorical.iter().any(|c| c.cardinality == 0) {
            return Err(ModelError::BadConfig(
                "categorical cardinality must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One labeled stream element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub categorical: Vec<u32>,
    pub numerical: Vec<f64>,
    pub label: bool,
}

/// Per-numeric-field learnable and estimation state.
#[derive(Debug, Clone)]
struct NumericField {
    reservoir: Reservoir,
    cache: TableCache,
    /// M x d meta-embedding rows.
    meta: Matrix,
    modulation: FieldModulation,
    /// M x (M+1) distance-to-weights map; ValueSpace encoder only.
    value_map: Option<Matrix>,
    /// Learned direction for the RawScalar encoder.
    raw_vec: Option<Vec<f64>>,
}

/// MLP layer: weight (out x in) plus bias.
#[derive(Debug, Clone)]
struct Layer {
    weight: Matrix,
    bias: Vec<f64>,
}

/// Metrics snapshot at a training step.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryPoint {
    /// Gradient steps taken when this evaluation ran.
    pub step: u64,
    pub metrics: Metrics,
}

/// Outcome of one streaming training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub trajectory: Vec<TrajectoryPoint>,
    pub final_metrics: Metrics,
}

#[derive(Debug, Clone, Default)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Streaming trainer; see the module docs for the pipeline.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: ModelConfig,
    schema: StreamSchema,
    numeric: Vec<NumericField>,
    cat_tables: Vec<Matrix>,
    layers: Vec<Layer>,
    adam: AdamState,
    samples_seen: u64,
    gradient_contributions: u64,
    steps: u64,
}

/// Gradient accumulator mirroring the parameter layout.
struct GradAccum {
    numeric_meta: Vec<Matrix>,
    numeric_mod: Vec<Option<Matrix>>,
    numeric_value_map: Vec<Option<Matrix>>,
    numeric_raw: Vec<Option<Vec<f64>>>,
    cat_tables: Vec<Matrix>,
    layers: Vec<(Matrix, Vec<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct TrainerCheckpoint {
    format_version: u32,
    config: ModelConfig,
    schema: StreamSchema,
    params: Vec<f64>,
    reservoirs: Vec<serde_json::Value>,
    adam_m: Vec<f64>,
    adam_v: Vec<f64>,
    adam_t: u64,
    samples_seen: u64,
    gradient_contributions: u64,
    steps: u64,
}

impl Trainer {
    pub fn new(config: ModelConfig, schema: StreamSchema) -> Result<Self, ModelError> {
        config.validate()?;
        schema.validate()?;
        let d = config.embedding_dim;
        let bins = config.bins;
        let field_dim = schema.modulating_fields().len() * d;
        let mut rng = CounterRng::new(CounterRng::derive_seed(config.seed, 0x11));

        let mut numeric = Vec::with_capacity(schema.numeric_fields.len());
        for idx in 0..schema.numeric_fields.len() {
            let res_seed = CounterRng::derive_seed(config.seed, 0x1000 + idx as u64);
            let modulation = if field_dim == 0 {
                FieldModulation::none()
            } else {
                FieldModulation::init(config.modulation, bins, field_dim, config.beta, &mut rng)?
            };
            let value_map = match config.encoder {
                EncoderKind::ValueSpace => {
                    Some(Matrix::gaussian_init(bins, bins + 1, 0.1, &mut rng))
                }
                _ => None,
            };
            let raw_vec = match config.encoder {
                EncoderKind::RawScalar => {
                    let scale = 1.0 / (d as f64).sqrt();
                    Some((0..d).map(|_| (2.0 * rng.next_f64() - 1.0) * scale).collect())
                }
                _ => None,
            };
            numeric.push(NumericField {
                reservoir: Reservoir::with_mode(
                    config.reservoir_capacity,
                    res_seed,
                    config.sampling_mode,
                )?,
                cache: TableCache::new(bins),
                meta: init_meta_embeddings(bins, d, &mut rng),
                modulation,
                value_map,
                raw_vec,
            });
        }

        let cat_tables = schema
            .categorical
            .iter()
            .map(|c| Matrix::uniform_init(c.cardinality as usize, d, 1.0 / (d as f64).sqrt(), &mut rng))
            .collect();

        let input_dim = (schema.numeric_fields.len() + schema.categorical.len()) * d;
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for &width in &config.hidden {
            if width == 0 {
                return Err(ModelError::BadConfig("hidden widths must be positive".into()));
            }
            let std = (2.0 / fan_in as f64).sqrt();
            layers.push(Layer {
                weight: Matrix::gaussian_init(width, fan_in, std, &mut rng),
                bias: vec![0.0; width],
            });
            fan_in = width;
        }
        let std = (2.0 / fan_in as f64).sqrt();
        layers.push(Layer {
            weight: Matrix::gaussian_init(1, fan_in, std, &mut rng),
            bias: vec![0.0],
        });

        Ok(Trainer {
            config,
            schema,
            numeric,
            cat_tables,
            layers,
            adam: AdamState::default(),
            samples_seen: 0,
            gradient_contributions: 0,
            steps: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn schema(&self) -> &StreamSchema {
        &self.schema
    }

    /// Stream elements fed to the reservoirs so far.
    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    /// Samples that have contributed to a gradient step; single-pass
    /// discipline means this never exceeds `samples_seen`.
    pub fn gradient_contributions(&self) -> u64 {
        self.gradient_contributions
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Borrow a numeric field's reservoir (for diagnostics).
    pub fn reservoir(&self, field: usize) -> &Reservoir {
        &self.numeric[field].reservoir
    }

    fn check_sample(&self, s: &Sample) -> Result<(), ModelError> {
        if s.numerical.len() != self.schema.numeric_fields.len() {
            return Err(ModelError::SchemaMismatch {
                what: "numeric",
                expected: self.schema.numeric_fields.len(),
                got: s.numerical.len(),
            });
        }
        if s.categorical.len() != self.schema.categorical.len() {
            return Err(ModelError::SchemaMismatch {
                what: "categorical",
                expected: self.schema.categorical.len(),
                got: s.categorical.len(),
            });
        }
        for (f, (&id, spec)) in s.categorical.iter().zip(&self.schema.categorical).enumerate() {
            if id >= spec.cardinality {
                return Err(ModelError::CategoryOutOfRange {
                    field: f,
                    id,
                    cardinality: spec.cardinality,
                });
            }
        }
        for (f, &x) in s.numerical.iter().enumerate() {
            if !x.is_finite() {
                return Err(ModelError::NonFiniteFeature { field: f });
            }
        }
        Ok(())
    }

    /// Refreshed quantile tables for every numeric field, built lazily.
    fn tables(&mut self) -> Result<Vec<QuantileTable>, ModelError> {
        let bins = self.config.bins;
        let mut tables = Vec::with_capacity(self.numeric.len());
        for (f, field) in self.numeric.iter_mut().enumerate() {
            if field.reservoir.len() < bins {
                return Err(ModelError::NotWarmedUp {
                    field: f,
                    have: field.reservoir.len(),
                    need: bins,
                });
            }
            tables.push(field.cache.table_for(&field.reservoir)?.clone());
        }
        Ok(tables)
    }

    /// Concatenated embedding of the modulating categorical fields.
    fn conditioning_embedding(&self, s: &Sample) -> Vec<f64> {
        let mut e = Vec::new();
        for &f in &self.schema.modulating_fields() {
            e.extend_from_slice(self.cat_tables[f].row(s.categorical[f] as usize));
        }
        e
    }

    /// Encoder stage: weight vector for aggregation, plus what backward needs.
    fn encode_weights(
        &self,
        field: usize,
        x: f64,
        table: &QuantileTable,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>), ModelError> {
        match self.config.encoder {
            EncoderKind::QuantileThermometer => {
                Ok((encode(x, table)?.into_weights(), None))
            }
            EncoderKind::ValueSpace => {
                let dist = encode_value_space(x, table)?;
                let b = table.boundaries();
                let span = b[b.len() - 1] - b[0];
                let norm = if span > 0.0 { 1.0 / span } else { 0.0 };
                let dist_norm: Vec<f64> = dist.iter().map(|v| v * norm).collect();
                let map = self.numeric[field].value_map.as_ref().expect("encoder state");
                Ok((map.matvec(&dist_norm), Some(dist_norm)))
            }
            EncoderKind::RawScalar => Ok((Vec::new(), None)),
        }
    }

    /// Embedding of one numeric field value under the current tables.
    pub fn embed_numeric(&mut self, field: usize, x: f64) -> Result<Vec<f64>, ModelError> {
        if !x.is_finite() {
            return Err(ModelError::NonFiniteFeature { field });
        }
        let tables = self.tables()?;
        // Without a sample there is no conditioning context; modulation
        // conditioned on an all-zero embedding is the neutral choice.
        let state = &self.numeric[field];
        if let Some(raw) = &state.raw_vec {
            return Ok(raw.iter().map(|r| r * x).collect());
        }
        let (weights, _) = self.encode_weights(field, x, &tables[field])?;
        let field_dim = self.schema.modulating_fields().len() * self.config.embedding_dim;
        let e_f = vec![0.0; field_dim];
        let state = &self.numeric[field];
        let (w_mod, _) = state.modulation.modulate(&weights, &e_f)?;
        Ok(aggregate(&w_mod, &state.meta)?)
    }

    /// Forward pass for one sample. Returns the clamped probability.
    fn forward(
        &self,
        s: &Sample,
        tables: &[QuantileTable],
        tape: Option<&mut Tape>,
    ) -> Result<f64, ModelError> {
        let d = self.config.embedding_dim;
        let e_f = self.conditioning_embedding(s);

        let mut input = Vec::with_capacity((self.numeric.len() + self.cat_tables.len()) * d);
        let mut numeric_tapes = Vec::new();
        for (f, state) in self.numeric.iter().enumerate() {
            let x = s.numerical[f];
            let emb = if let Some(raw) = &state.raw_vec {
                raw.iter().map(|r| r * x).collect::<Vec<f64>>()
            } else {
                let (weights, dist_norm) = self.encode_weights(f, x, &tables[f])?;
                let (w_mod, mod_cache) = state.modulation.modulate(&weights, &e_f)?;
                let emb = aggregate(&w_mod, &state.meta)?;
                numeric_tapes.push(NumericTape {
                    w_mod,
                    mod_cache: Some(mod_cache),
                    dist_norm,
                });
                input.extend_from_slice(&emb);
                continue;
            };
            numeric_tapes.push(NumericTape {
                w_mod: Vec::new(),
                mod_cache: None,
                dist_norm: None,
            });
            input.extend_from_slice(&emb);
        }
        for (f, table) in self.cat_tables.iter().enumerate() {
            input.extend_from_slice(table.row(s.categorical[f] as usize));
        }

        // MLP with ReLU hidden activations and a scalar logit.
        let mut activations = vec![input];
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weight.matvec(activations.last().unwrap());
            for (zi, b) in z.iter_mut().zip(&layer.bias) {
                *zi += b;
            }
            if li + 1 < self.layers.len() {
                for zi in z.iter_mut() {
                    *zi = zi.max(0.0);
                }
            }
            activations.push(z);
        }
        let logit = activations.last().unwrap()[0];
        let raw = sigmoid(logit);
        let p = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);

        if let Some(tape) = tape {
            tape.numeric = numeric_tapes;
            tape.activations = activations;
            tape.clamped = raw < PROB_EPS || raw > 1.0 - PROB_EPS;
        }
        Ok(p)
    }

    /// Prediction without updating any state.
    pub fn predict(&mut self, s: &Sample) -> Result<f64, ModelError> {
        self.check_sample(s)?;
        let tables = self.tables()?;
        self.forward(s, &tables, None)
    }

    /// Loss and gradient over one batch.
    ///
    /// The loss is mean clamped binary cross-entropy plus `l2_lambda` times
    /// the squared norm of every learnable parameter; the gradient comes
    /// back as a flat vector in [`Trainer::param_vec`] order. Reservoirs are
    /// not touched — callers decide when the stream is observed.
    pub fn loss_and_grad(&mut self, batch: &[Sample]) -> Result<(f64, Vec<f64>), ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        for s in batch {
            self.check_sample(s)?;
        }
        let tables = self.tables()?;
        let n = batch.len() as f64;
        let mut grads = GradAccum::zeros(self);
        let mut loss = 0.0;
        let mut tape = Tape::default();

        for s in batch {
            let p = self.forward(s, &tables, Some(&mut tape))?;
            loss += if s.label { -p.ln() } else { -(1.0 - p).ln() } / n;

            // d loss / d logit of the computed (clamped) loss: zero in the
            // clamped region, the usual p - y elsewhere.
            let y = if s.label { 1.0 } else { 0.0 };
            let dlogit = if tape.clamped { 0.0 } else { (p - y) / n };
            self.backward(s, &tape, dlogit, &mut grads)?;
        }

        // L2 on every learnable parameter, in both loss and gradient.
        let lambda = self.config.l2_lambda;
        let params = self.param_vec();
        let mut gvec = grads.into_vec();
        debug_assert_eq!(params.len(), gvec.len());
        if lambda > 0.0 {
            for (g, p) in gvec.iter_mut().zip(&params) {
                *g += 2.0 * lambda * p;
            }
            loss += lambda * params.iter().map(|p| p * p).sum::<f64>();
        }
        Ok((loss, gvec))
    }

    /// Backward pass for one sample, accumulating into `grads`.
    fn backward(
        &self,
        s: &Sample,
        tape: &Tape,
        dlogit: f64,
        grads: &mut GradAccum,
    ) -> Result<(), ModelError> {
        let d = self.config.embedding_dim;

        // MLP backward.
        let mut upstream = vec![dlogit];
        for li in (0..self.layers.len()).rev() {
            let a_prev = &tape.activations[li];
            let (dw, db) = &mut grads.layers[li];
            dw.add_outer(&upstream, a_prev, 1.0);
            for (b, u) in db.iter_mut().zip(&upstream) {
                *b += u;
            }
            let mut da = self.layers[li].weight.matvec_transpose(&upstream);
            if li > 0 {
                // ReLU mask from the stored post-activation values.
                for (g, &a) in da.iter_mut().zip(&tape.activations[li]) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            upstream = da;
        }
        let dinput = upstream;

        // Split the input gradient back into field segments.
        let modulating = self.schema.modulating_fields();
        let mut e_f_grad = vec![0.0; modulating.len() * d];
        for (f, state) in self.numeric.iter().enumerate() {
            let seg = &dinput[f * d..(f + 1) * d];
            if let Some(_raw) = &state.raw_vec {
                let graw = grads.numeric_raw[f].as_mut().expect("raw grads");
                for (g, u) in graw.iter_mut().zip(seg) {
                    *g += u * s.numerical[f];
                }
                continue;
            }
            let ntape = &tape.numeric[f];
            let (dmeta, dwmod) = aggregate_backward(seg, &ntape.w_mod, &state.meta)?;
            grads.numeric_meta[f].add_scaled(&dmeta, 1.0);
            let mg = state
                .modulation
                .modulate_backward(&dwmod, ntape.mod_cache.as_ref().expect("mod cache"))?;
            if let Some(dw) = mg.w_gate {
                grads.numeric_mod[f].as_mut().expect("mod grads").add_scaled(&dw, 1.0);
            }
            if let Some(dw) = mg.w_tran {
                grads.numeric_mod[f].as_mut().expect("mod grads").add_scaled(&dw, 1.0);
            }
            for (acc, g) in e_f_grad.iter_mut().zip(&mg.field) {
                *acc += g;
            }
            if let Some(dist_norm) = &ntape.dist_norm {
                let gmap = grads.numeric_value_map[f].as_mut().expect("map grads");
                gmap.add_outer(&mg.input, dist_norm, 1.0);
            }
        }

        // Categorical embeddings: direct MLP segments plus, for modulating
        // fields, their slice of the conditioning-embedding gradient.
        let base = self.numeric.len() * d;
        for f in 0..self.cat_tables.len() {
            let seg = &dinput[base + f * d..base + (f + 1) * d];
            let row = s.categorical[f] as usize;
            let grow = grads.cat_tables[f].row_mut(row);
            for (g, u) in grow.iter_mut().zip(seg) {
                *g += u;
            }
        }
        for (slot, &f) in modulating.iter().enumerate() {
            let seg = &e_f_grad[slot * d..(slot + 1) * d];
            let row = s.categorical[f] as usize;
            let grow = grads.cat_tables[f].row_mut(row);
            for (g, u) in grow.iter_mut().zip(seg) {
                *g += u;
            }
        }
        Ok(())
    }

    /// All learnable parameters as one flat vector.
    ///
    /// Order (load-bearing for gradients, optimizers, and checkpoints):
    /// numeric fields in schema order (meta table row-major, modulation
    /// matrix row-major if any, value map row-major if any, raw direction if
    /// any), then categorical tables row-major in schema order, then MLP
    /// layers in order (weight row-major, then bias).
    pub fn param_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for field in &self.numeric {
            out.extend_from_slice(field.meta.data());
            match &field.modulation {
                FieldModulation::None => {}
                FieldModulation::Affine { w_tran, .. } => out.extend_from_slice(w_tran.data()),
                FieldModulation::Gating { w_gate, .. } => out.extend_from_slice(w_gate.data()),
            }
            if let Some(map) = &field.value_map {
                out.extend_from_slice(map.data());
            }
            if let Some(raw) = &field.raw_vec {
                out.extend_from_slice(raw);
            }
        }
        for table in &self.cat_tables {
            out.extend_from_slice(table.data());
        }
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.data());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Loads a flat parameter vector written by [`Trainer::param_vec`].
    pub fn load_param_vec(&mut self, flat: &[f64]) -> Result<(), ModelError> {
        let expected = self.param_vec().len();
        if flat.len() != expected {
            return Err(ModelError::ParamLengthMismatch {
                expected,
                got: flat.len(),
            });
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for field in &mut self.numeric {
            take(field.meta.data_mut());
            match &mut field.modulation {
                FieldModulation::None => {}
                FieldModulation::Affine { w_tran, .. } => take(w_tran.data_mut()),
                FieldModulation::Gating { w_gate, .. } => take(w_gate.data_mut()),
            }
            if let Some(map) = &mut field.value_map {
                take(map.data_mut());
            }
            if let Some(raw) = &mut field.raw_vec {
                take(raw);
            }
        }
        for table in &mut self.cat_tables {
            take(table.data_mut());
        }
        for layer in &mut self.layers {
            take(layer.weight.data_mut());
            take(&mut layer.bias);
        }
        debug_assert_eq!(pos, flat.len());
        Ok(())
    }

    /// One optimizer step from a flat gradient.
    fn apply_gradient(&mut self, gvec: &[f64]) -> Result<(), ModelError> {
        let mut params = self.param_vec();
        if gvec.len() != params.len() {
            return Err(ModelError::ParamLengthMismatch {
                expected: params.len(),
                got: gvec.len(),
            });
        }
        let lr = self.config.learning_rate;
        match self.config.optimizer {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(gvec) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                if self.adam.m.len() != params.len() {
                    self.adam.m = vec![0.0; params.len()];
                    self.adam.v = vec![0.0; params.len()];
                    self.adam.t = 0;
                }
                self.adam.t += 1;
                let t = self.adam.t as f64;
                let (c1, c2) = (1.0 - B1.powf(t), 1.0 - B2.powf(t));
                for i in 0..params.len() {
                    self.adam.m[i] = B1 * self.adam.m[i] + (1.0 - B1) * gvec[i];
                    self.adam.v[i] = B2 * self.adam.v[i] + (1.0 - B2) * gvec[i] * gvec[i];
                    let mhat = self.adam.m[i] / c1;
                    let vhat = self.adam.v[i] / c2;
                    params[i] -= lr * mhat / (vhat.sqrt() + EPS);
                }
            }
        }
        self.load_param_vec(&params)?;
        self.steps += 1;
        Ok(())
    }

    /// Feeds the batch's numeric values to the reservoirs, then takes one
    /// gradient step on the batch. Returns the batch loss.
    pub fn train_batch(&mut self, batch: &[Sample]) -> Result<f64, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        for s in batch {
            self.check_sample(s)?;
        }
        for (f, field) in self.numeric.iter_mut().enumerate() {
            for s in batch {
                field.reservoir.observe(s.numerical[f]);
            }
        }
        self.samples_seen += batch.len() as u64;
        let (loss, gvec) = self.loss_and_grad(batch)?;
        self.apply_gradient(&gvec)?;
        self.gradient_contributions += batch.len() as u64;
        Ok(loss)
    }

    /// Single-pass training over `samples` with a held-out temporal tail.
    ///
    /// The last `ceil(holdout_frac * len)` samples are never trained on;
    /// metrics against them are recorded every `eval_every` batches and once
    /// at the end.
    pub fn train_stream(
        &mut self,
        samples: &[Sample],
        holdout_frac: f64,
        eval_every: usize,
    ) -> Result<TrainReport, ModelError> {
        if !(0.0..1.0).contains(&holdout_frac) || holdout_frac <= 0.0 {
            return Err(ModelError::BadConfig(
                "holdout_frac must lie in (0, 1)".into(),
            ));
        }
        if eval_every == 0 {
            return Err(ModelError::BadConfig("eval_every must be positive".into()));
        }
        let n_holdout = ((samples.len() as f64) * holdout_frac).ceil() as usize;
        if n_holdout == 0 || n_holdout >= samples.len() {
            return Err(ModelError::BadConfig(
                "holdout split leaves no training data".into(),
            ));
        }
        let (train, holdout) = samples.split_at(samples.len() - n_holdout);

        let mut trajectory = Vec::new();
        let mut batches = 0usize;
        for batch in train.chunks(self.config.batch_size) {
            self.train_batch(batch)?;
            batches += 1;
            if batches % eval_every == 0 {
                trajectory.push(TrajectoryPoint {
                    step: self.steps,
                    metrics: self.evaluate(holdout)?,
                });
            }
        }
        let final_metrics = self.evaluate(holdout)?;
        if trajectory.last().map(|p| p.step) != Some(self.steps) {
            trajectory.push(TrajectoryPoint {
                step: self.steps,
                metrics: final_metrics,
            });
        }
        Ok(TrainReport {
            trajectory,
            final_metrics,
        })
    }

    /// Metrics on a labeled set; pure forward passes, no state updates.
    pub fn evaluate(&mut self, samples: &[Sample]) -> Result<Metrics, ModelError> {
        if samples.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut labels = Vec::with_capacity(samples.len());
        let mut preds = Vec::with_capacity(samples.len());
        let tables = self.tables()?;
        for s in samples {
            self.check_sample(s)?;
            labels.push(s.label);
            preds.push(self.forward(s, &tables, None)?);
        }
        Ok(metrics::evaluate(&labels, &preds)?)
    }

    /// Serializes the full training state to versioned JSON.
    pub fn to_checkpoint_json(&self) -> Result<String, ModelError> {
        let reservoirs = self
            .numeric
            .iter()
            .map(|f| serde_json::from_str(&f.reservoir.to_checkpoint_json()))
            .collect::<Result<Vec<_>, _>>()?;
        let doc = TrainerCheckpoint {
            format_version: TRAINER_CHECKPOINT_FORMAT,
            config: self.config.clone(),
            schema: self.schema.clone(),
            params: self.param_vec(),
            reservoirs,
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
            adam_t: self.adam.t,
            samples_seen: self.samples_seen,
            gradient_contributions: self.gradient_contributions,
            steps: self.steps,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    /// Restores a trainer from [`Trainer::to_checkpoint_json`] output;
    /// training continues bit-identically to an uncheckpointed run.
    pub fn from_checkpoint_json(json: &str) -> Result<Self, ModelError> {
        let doc: TrainerCheckpoint = serde_json::from_str(json)?;
        if doc.format_version != TRAINER_CHECKPOINT_FORMAT {
            return Err(ModelError::UnsupportedFormat(doc.format_version));
        }
        let mut trainer = Trainer::new(doc.config, doc.schema)?;
        if doc.reservoirs.len() != trainer.numeric.len() {
            return Err(ModelError::CorruptCheckpoint(format!(
                "{} reservoirs for {} numeric fields",
                doc.reservoirs.len(),
                trainer.numeric.len()
            )));
        }
        trainer.load_param_vec(&doc.params)?;
        for (field, value) in trainer.numeric.iter_mut().zip(&doc.reservoirs) {
            field.reservoir = Reservoir::from_checkpoint_json(&serde_json::to_string(value)?)?;
        }
        trainer.adam = AdamState {
            m: doc.adam_m,
            v: doc.adam_v,
            t: doc.adam_t,
        };
        trainer.samples_seen = doc.samples_seen;
        trainer.gradient_contributions = doc.gradient_contributions;
        trainer.steps = doc.steps;
        Ok(trainer)
    }
}

/// Forward-pass state reused by backward.
#[derive(Default)]
struct Tape {
    numeric: Vec<NumericTape>,
    activations: Vec<Vec<f64>>,
    clamped: bool,
}

struct NumericTape {
    w_mod: Vec<f64>,
    mod_cache: Option<crate::modulation::ModulationCache>,
    dist_norm: Option<Vec<f64>>,
}

impl GradAccum {
    fn zeros(t: &Trainer) -> Self {
        GradAccum {
            numeric_meta: t
                .numeric
                .iter()
                .map(|f| Matrix::zeros(f.meta.rows(), f.meta.cols()))
                .collect(),
            numeric_mod: t
                .numeric
                .iter()
                .map(|f| match &f.modulation {
                    FieldModulation::None => None,
                    FieldModulation::Affine { w_tran, .. } => {
                        Some(Matrix::zeros(w_tran.rows(), w_tran.cols()))
                    }
                    FieldModulation::Gating { w_gate, .. } => {
                        Some(Matrix::zeros(w_gate.rows(), w_gate.cols()))
                    }
                })
                .collect(),
            numeric_value_map: t
                .numeric
                .iter()
                .map(|f| f.value_map.as_ref().map(|m| Matrix::zeros(m.rows(), m.cols())))
                .collect(),
            numeric_raw: t
                .numeric
                .iter()
                .map(|f| f.raw_vec.as_ref().map(|r| vec![0.0; r.len()]))
                .collect(),
            cat_tables: t
                .cat_tables
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
            layers: t
                .layers
                .iter()
                .map(|l| {
                    (
                        Matrix::zeros(l.weight.rows(), l.weight.cols()),
                        vec![0.0; l.bias.len()],
                    )
                })
                .collect(),
        }
    }

    /// Flattens in exactly the [`Trainer::param_vec`] order.
    fn into_vec(self) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..self.numeric_meta.len() {
            out.extend_from_slice(self.numeric_meta[i].data());
            if let Some(m) = &self.numeric_mod[i] {
                out.extend_from_slice(m.data());
            }
            if let Some(m) = &self.numeric_value_map[i] {
                out.extend_from_slice(m.data());
            }
            if let Some(r) = &self.numeric_raw[i] {
                out.extend_from_slice(r);
            }
        }
        for t in &self.cat_tables {
            out.extend_from_slice(t.data());
        }
        for (w, b) in &self.layers {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }
}

/// Loads a labeled stream from CSV.
///
/// The header names the fields; the column named `label` (values 0/1) is the
/// target. A column whose every value parses as a number becomes a numeric
/// field; anything else becomes a categorical field with ids assigned by
/// first appearance. Up to three smallest-cardinality categorical fields are
/// marked as modulating (ties broken by column order).
pub fn load_csv(path: &Path) -> Result<(StreamSchema, Vec<Sample>), ModelError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| ModelError::Csv(e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| ModelError::Csv(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| ModelError::Csv("no `label` column".into()))?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| ModelError::Csv(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(ModelError::Csv(format!(
                "row {} has {} columns, header has {}",
                rows.len() + 2,
                record.len(),
                headers.len()
            )));
        }
        rows.push(record.iter().map(|v| v.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(ModelError::Csv("no data rows".into()));
    }

    // Column typing: numeric iff every value parses as f64.
    let mut numeric_cols = Vec::new();
    let mut cat_cols = Vec::new();
    for (c, name) in headers.iter().enumerate() {
        if c == label_col {
            continue;
        }
        if rows.iter().all(|r| r[c].parse::<f64>().is_ok()) {
            numeric_cols.push((c, name.clone()));
        } else {
            cat_cols.push((c, name.clone()));
        }
    }

    // Categorical vocabularies by first appearance.
    let mut vocabs: Vec<HashMap<String, u32>> = vec![HashMap::new(); cat_cols.len()];
    for row in &rows {
        for (v, (c, _)) in vocabs.iter_mut().zip(&cat_cols) {
            let next = v.len() as u32;
            v.entry(row[*c].clone()).or_insert(next);
        }
    }

    // Modulating set: up to 3 smallest cardinalities, stable on ties.
    let mut order: Vec<usize> = (0..cat_cols.len()).collect();
    order.sort_by_key(|&i| (vocabs[i].len(), i));
    let modulating: Vec<usize> = order.into_iter().take(3).collect();

    let schema = StreamSchema {
        numeric_fields: numeric_cols.iter().map(|(_, n)| n.clone()).collect(),
        categorical: cat_cols
            .iter()
            .enumerate()
            .map(|(i, (_, name))| CatFieldSpec {
                name: name.clone(),
                cardinality: vocabs[i].len() as u32,
                modulating: modulating.contains(&i),
            })
            .collect(),
    };

    let mut samples = Vec::with_capacity(rows.len());
    for (rix, row) in rows.iter().enumerate() {
        let label = match row[label_col].as_str() {
            "0" | "0.0" => false,
            "1" | "1.0" => true,
            other => {
                return Err(ModelError::Csv(format!(
                    "row {}: label `{other}` is not 0/1",
                    rix + 2
                )))
            }
        };
        let numerical = numeric_cols
            .iter()
            .map(|(c, _)| row[*c].parse::<f64>().expect("checked by typing pass"))
            .collect();
        let categorical = cat_cols
            .iter()
            .enumerate()
            .map(|(i, (c, _))| vocabs[i][&row[*c]])
            .collect();
        samples.push(Sample {
            categorical,
            numerical,
            label,
        });
    }
    Ok((schema, samples))
}
