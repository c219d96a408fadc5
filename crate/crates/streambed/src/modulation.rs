//! Field-conditioned recalibration of bin-weight vectors and aggregation
//! into dense embeddings.
//!
//! A thermometer code says *where* a value sits in its field's distribution;
//! it cannot say how that position should be read in the context of other
//! fields (the same spend percentile means different things for different
//! merchant categories, say). Modulation closes that gap: conditioned on a
//! concatenated embedding of the governing categorical fields, the bin-weight
//! vector is recalibrated before aggregation, by one of:
//!
//! * **Gating** — elementwise: `out = beta * (v ⊙ sigmoid(W_gate f)) +
//!   (1 - beta) * v`. Cheap, shape-preserving, the default.
//! * **Affine** — a full learned map: `W_mod = reshape(W_tran f, M×M)`,
//!   `out = beta * sigmoid(W_mod v) + (1 - beta) * v`. More expressive,
//!   `O(M^2)` parameters per conditioning dimension.
//!
//! `beta` blends recalibrated and raw weights; `beta = 0` is exactly the
//! identity. The final embedding is the weight-blended sum of per-bin
//! meta-embedding rows, [`aggregate`].
//!
//! Everything here sits on the gradient path of a trained model, so each
//! forward has a hand-derived backward (with the incoming weight vector
//! treated as a constant — it comes out of a non-differentiable encoder) and
//! the tests check every partial against central finite differences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::CounterRng;
use crate::tensor::Matrix;

/// Errors from modulation construction and gradient plumbing.
#[derive(Debug, Error)]
pub enum ModulationError {
    #[error("beta must lie in [0, 1], got {0}")]
    BetaOutOfRange(f64),
    #[error("modulation needs at least one bin")]
    ZeroBins,
    #[error("expected a length-{expected} vector, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("stored parameter shapes are inconsistent")]
    CorruptParameters,
}

/// Which modulation form a model uses; configuration-level switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulationKind {
    None,
    Affine,
    Gating,
}

/// Modulation parameters for one numerical field.
///
/// The variant carries exactly the tensors its form needs, so an impossible
/// state (a gating field with an affine matrix) cannot be represented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldModulation {
    /// Pass-through: the weight vector is used as-is.
    None,
    /// Full conditioned linear map over bins.
    Affine {
        /// `(bins * bins) x field_dim`; row `i * bins + j` feeds `W_mod[i][j]`.
        w_tran: Matrix,
        beta: f64,
    },
    /// Elementwise conditioned gate per bin.
    Gating {
        /// `bins x field_dim`.
        w_gate: Matrix,
        beta: f64,
    },
}

/// Forward-pass intermediates needed by the backward pass.
#[derive(Debug, Clone)]
pub struct ModulationCache {
    weights_in: Vec<f64>,
    field: Vec<f64>,
    /// Sigmoid outputs (gate vector or mapped-bin vector); empty for `None`.
    sig: Vec<f64>,
}

/// Gradients of one modulation application.
#[derive(Debug, Clone)]
pub struct ModulationGrads {
    /// Gradient w.r.t. `w_tran`; present iff the field is affine-modulated.
    pub w_tran: Option<Matrix>,
    /// Gradient w.r.t. `w_gate`; present iff the field is gate-modulated.
    pub w_gate: Option<Matrix>,
    /// Gradient w.r.t. the conditioning field embedding.
    pub field: Vec<f64>,
    /// Gradient w.r.t. the incoming weight vector. Thermometer codes are
    /// statistics, not parameters, so their callers drop this; the learned
    /// value-space map needs it to train.
    pub input: Vec<f64>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_beta(beta: f64) -> Result<f64, ModulationError> {
    if !(0.0..=1.0).contains(&beta) || beta.is_nan() {
        return Err(ModulationError::BetaOutOfRange(beta));
    }
    Ok(beta)
}

impl FieldModulation {
    /// Pass-through modulation.
    pub fn none() -> Self {
        FieldModulation::None
    }

    /// Fresh affine modulation, entries `N(0, 0.01)`.
    pub fn affine(
        bins: usize,
        field_dim: usize,
        beta: f64,
        rng: &mut CounterRng,
    ) -> Result<Self, ModulationError> {
        if bins == 0 {
            return Err(ModulationError::ZeroBins);
        }
        Ok(FieldModulation::Affine {
            w_tran: Matrix::gaussian_init(bins * bins, field_dim, 0.01, rng),
            beta: check_beta(beta)?,
        })
    }

    /// Fresh gating modulation, entries `N(0, 0.01)`.
    pub fn gating(
        bins: usize,
        field_dim: usize,
        beta: f64,
        rng: &mut CounterRng,
    ) -> Result<Self, ModulationError> {
        if bins == 0 {
            return Err(ModulationError::ZeroBins);
        }
        Ok(FieldModulation::Gating {
            w_gate: Matrix::gaussian_init(bins, field_dim, 0.01, rng),
            beta: check_beta(beta)?,
        })
    }

    /// Builds the requested kind with fresh parameters.
    pub fn init(
        kind: ModulationKind,
        bins: usize,
        field_dim: usize,
        beta: f64,
        rng: &mut CounterRng,
    ) -> Result<Self, ModulationError> {
        match kind {
            ModulationKind::None => Ok(FieldModulation::None),
            ModulationKind::Affine => Self::affine(bins, field_dim, beta, rng),
            ModulationKind::Gating => Self::gating(bins, field_dim, beta, rng),
        }
    }

    /// Number of bins this modulation expects, if parameterized.
    pub fn bins(&self) -> Option<usize> {
        match self {
            FieldModulation::None => None,
            FieldModulation::Affine { w_tran, .. } => {
                Some((w_tran.rows() as f64).sqrt().round() as usize)
            }
            FieldModulation::Gating { w_gate, .. } => Some(w_gate.rows()),
        }
    }

    /// Recalibrates a bin-weight vector conditioned on a field embedding.
    ///
    /// Returns the blended output and the cache the backward pass needs.
    pub fn modulate(
        &self,
        weights_in: &[f64],
        field: &[f64],
    ) -> Result<(Vec<f64>, ModulationCache), ModulationError> {
        let cache = |sig: Vec<f64>| ModulationCache {
            weights_in: weights_in.to_vec(),
            field: field.to_vec(),
            sig,
        };
        match self {
            FieldModulation::None => Ok((weights_in.to_vec(), cache(Vec::new()))),
            FieldModulation::Gating { w_gate, beta } => {
                check_dims(w_gate.rows(), weights_in.len())?;
                check_dims(w_gate.cols(), field.len())?;
                let sig: Vec<f64> = w_gate.matvec(field).into_iter().map(sigmoid).collect();
                let out = weights_in
                    .iter()
                    .zip(&sig)
                    .map(|(v, s)| beta * v * s + (1.0 - beta) * v)
                    .collect();
                Ok((out, cache(sig)))
            }
            FieldModulation::Affine { w_tran, beta } => {
                let m = weights_in.len();
                check_dims(w_tran.rows(), m * m)?;
                check_dims(w_tran.cols(), field.len())?;
                let flat = w_tran.matvec(field); // reshape target: m x m row-major
                let sig: Vec<f64> = (0..m)
                    .map(|i| {
                        let z: f64 = flat[i * m..(i + 1) * m]
                            .iter()
                            .zip(weights_in)
                            .map(|(w, v)| w * v)
                            .sum();
                        sigmoid(z)
                    })
                    .collect();
                let out = weights_in
                    .iter()
                    .zip(&sig)
                    .map(|(v, s)| beta * s + (1.0 - beta) * v)
                    .collect();
                Ok((out, cache(sig)))
            }
        }
    }

    /// Backward pass of [`FieldModulation::modulate`].
    ///
    /// `upstream` is the loss gradient w.r.t. the modulated output. The input
    /// weight vector is treated as a constant; gradients are returned for the
    /// modulation parameters and for the conditioning field embedding.
    pub fn modulate_backward(
        &self,
        upstream: &[f64],
        cache: &ModulationCache,
    ) -> Result<ModulationGrads, ModulationError> {
        check_dims(cache.weights_in.len(), upstream.len())?;
        match self {
            FieldModulation::None => Ok(ModulationGrads {
                w_tran: None,
                w_gate: None,
                field: vec![0.0; cache.field.len()],
                input: upstream.to_vec(),
            }),
            FieldModulation::Gating { w_gate, beta } => {
                check_dims(w_gate.rows(), upstream.len())?;
                check_dims(w_gate.cols(), cache.field.len())?;
                // out_i = beta * v_i * s_i + (1 - beta) * v_i
                // dL/dg_i = u_i * beta * v_i * s_i * (1 - s_i)
                let dgate: Vec<f64> = upstream
                    .iter()
                    .zip(&cache.weights_in)
                    .zip(&cache.sig)
                    .map(|((u, v), s)| u * beta * v * s * (1.0 - s))
                    .collect();
                let mut dw = Matrix::zeros(w_gate.rows(), w_gate.cols());
                dw.add_outer(&dgate, &cache.field, 1.0);
                let input = upstream
                    .iter()
                    .zip(&cache.sig)
                    .map(|(u, s)| u * (beta * s + (1.0 - beta)))
                    .collect();
                Ok(ModulationGrads {
                    w_tran: None,
                    w_gate: Some(dw),
                    field: w_gate.matvec_transpose(&dgate),
                    input,
                })
            }
            FieldModulation::Affine { w_tran, beta } => {
                let m = upstream.len();
                check_dims(w_tran.rows(), m * m)?;
                check_dims(w_tran.cols(), cache.field.len())?;
                // out_i = beta * s_i + (1 - beta) * v_i with
                // s_i = sigmoid(sum_j W_mod[i][j] v_j).
                let dz: Vec<f64> = upstream
                    .iter()
                    .zip(&cache.sig)
                    .map(|(u, s)| u * beta * s * (1.0 - s))
                    .collect();
                // dL/dW_mod[i][j] = dz_i * v_j, flattened to the w_tran rows.
                let dmod_flat: Vec<f64> = dz
                    .iter()
                    .flat_map(|dzi| cache.weights_in.iter().map(move |v| dzi * v))
                    .collect();
                let mut dw = Matrix::zeros(w_tran.rows(), w_tran.cols());
                dw.add_outer(&dmod_flat, &cache.field, 1.0);
                // dL/dv_j = sum_i dz_i * W_mod[i][j] + (1 - beta) * u_j.
                let mapped = w_tran.matvec(&cache.field);
                let input = (0..m)
                    .map(|j| {
                        let through: f64 =
                            (0..m).map(|i| dz[i] * mapped[i * m + j]).sum();
                        through + (1.0 - beta) * upstream[j]
                    })
                    .collect();
                Ok(ModulationGrads {
                    w_tran: Some(dw),
                    w_gate: None,
                    field: w_tran.matvec_transpose(&dmod_flat),
                    input,
                })
            }
        }
    }
}

fn check_dims(expected: usize, got: usize) -> Result<(), ModulationError> {
    if expected != got {
        return Err(ModulationError::ShapeMismatch { expected, got });
    }
    Ok(())
}

/// Fresh meta-embedding table (`bins x dim`), entries `U(-1/sqrt(dim), 1/sqrt(dim))`.
pub fn init_meta_embeddings(bins: usize, dim: usize, rng: &mut CounterRng) -> Matrix {
    Matrix::uniform_init(bins, dim, 1.0 / (dim as f64).sqrt(), rng)
}

/// Weighted sum of meta-embedding rows: `out = sum_i weights[i] * table[i, :]`.
pub fn aggregate(weights: &[f64], table: &Matrix) -> Result<Vec<f64>, ModulationError> {
    check_dims(table.rows(), weights.len())?;
    Ok(table.matvec_transpose(weights))
}

/// Backward of [`aggregate`]: gradients w.r.t. the table and the weights.
pub fn aggregate_backward(
    upstream: &[f64],
    weights: &[f64],
    table: &Matrix,
) -> Result<(Matrix, Vec<f64>), ModulationError> {
    check_dims(table.rows(), weights.len())?;
    check_dims(table.cols(), upstream.len())?;
    let mut dtable = Matrix::zeros(table.rows(), table.cols());
    dtable.add_outer(weights, upstream, 1.0);
    let dweights = table.matvec(upstream);
    Ok((dtable, dweights))
}
