//! Dense matrices, activations, dropout, the crate-wide RNG and the
//! finite-difference gradient checker.

mod gradcheck;
mod matrix;
mod rng;

pub use gradcheck::{grad_check, GRAD_CHECK_EPS};
pub use matrix::{gemm, sigmoid, Activation, Matrix, Trans};
pub use rng::Rng;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout.
///
/// In train mode each entry is zeroed with probability `rate` and survivors
/// are scaled by `1 / (1 - rate)`. The returned mask holds the per-entry
/// multiplier (0 or the scale), so `out = x ⊙ mask`. Eval mode returns `x`
/// with an all-ones mask and draws nothing from `rng`.
pub fn dropout_apply(x: &Matrix, rate: f64, rng: &mut Rng, mode: Mode) -> Result<(Matrix, Matrix)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Param(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), Matrix::ones(x.rows(), x.cols())));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut mask = Matrix::zeros(x.rows(), x.cols());
    for m in mask.as_mut_slice() {
        if !rng.bernoulli(rate) {
            *m = keep_scale;
        }
    }
    let out = x.hadamard(&mask)?;
    Ok((out, mask))
}
