//! Differentiable building blocks: dense layers, a GRU cell, Adam, polyak
//! target synchronization, and finite-difference gradient checking.
//!
//! Networks are fixed stacks, so gradients are propagated by hand through an
//! explicit list of blocks: every `forward_traced` returns a trace that the
//! matching `backward` consumes.

mod dense;
mod gradcheck;
mod gru;
mod optim;
mod params;

pub use dense::{glorot_uniform, sigmoid, Activation, Dense, DenseTrace, Mlp, MlpTrace};
pub use gradcheck::{check_parameter_gradient, gradient_check, relative_error, Block, BlockContext, KINK_MARGIN, PARAMS_PER_PROBE};
pub use gru::{GruCell, GruTrace};
pub use optim::{adam_update, blend, polyak_update, AdamConfig, AdamState, ADAM_HYPER, ADAM_M_PREFIX, ADAM_STEP, ADAM_V_PREFIX};
pub use params::{ParamId, ParameterSet, Tensor};

use crate::error::{ensure_len, Result};

/// Mean squared error `Σ (p − t)² / n`.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    ensure_len("mse target", target.len(), pred.len())?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
}

/// `∂ mse / ∂ pred = 2 (pred − target) / n`.
pub fn mse_gradient(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    ensure_len("mse target", target.len(), pred.len())?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
}
