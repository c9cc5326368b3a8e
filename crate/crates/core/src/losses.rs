//! Task losses and their joint objective.
//!
//! * classification: binary cross-entropy on `p`
//! * deviation ranking: Z-score of `score` under a fixed Gaussian prior,
//!   absolute value for negatives and a hinge at `a_margin` for positives
//! * contrastive one-class: distance of `q` from a frozen center, pulled in
//!   for negatives and pushed beyond `m_margin` for positives
//!
//! Each function returns `(value, gradient)` with respect to the network
//! output it consumes.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Matrix, Rng};
use crate::error::{Error, Result};
use crate::network::Outputs;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub prior_mu: f64,
    pub prior_sigma: f64,
    pub a_margin: f64,
    pub m_margin: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            beta: 2.0,
            prior_mu: 0.0,
            prior_sigma: 1.0,
            a_margin: 5.0,
            m_margin: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && self.beta >= 0.0
            && self.prior_sigma > 0.0
            && self.a_margin > 0.0
            && self.m_margin > 0.0
            && self.prior_mu.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid loss config: {self:?}")))
        }
    }
}

/// Fixed one-class center, drawn once from a standard Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Center(Matrix);

impl Center {
    pub fn draw(dim: usize, rng: &mut Rng) -> Self {
        Center(Matrix::row_vector((0..dim).map(|_| rng.normal()).collect()))
    }

    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows() != 1 || !m.is_finite() {
            return Err(Error::Param(format!("center must be a finite row vector, got {m:?}")));
        }
        Ok(Center(m))
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    /// Euclidean distance from `q`.
    pub fn distance(&self, q: &[f64]) -> f64 {
        q.iter()
            .zip(self.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

fn check_label(y: u8) -> Result<()> {
    if y > 1 {
        Err(Error::Label(y))
    } else {
        Ok(())
    }
}

/// Binary cross-entropy with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(p: f64, y: u8) -> Result<(f64, f64)> {
    check_label(y)?;
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let yf = f64::from(y);
    let value = -(yf * p.ln() + (1.0 - yf) * (1.0 - p).ln());
    let grad = -yf / p + (1.0 - yf) / (1.0 - p);
    Ok((value, grad))
}

pub fn deviation(score: f64, cfg: &LossConfig) -> f64 {
    (score - cfg.prior_mu) / cfg.prior_sigma
}

/// Subgradient 0 at `dev == 0` for negatives and at `dev == a` for positives.
pub fn deviation_loss(score: f64, y: u8, cfg: &LossConfig) -> Result<(f64, f64)> {
    check_label(y)?;
    let dev = deviation(score, cfg);
    let inv_sigma = 1.0 / cfg.prior_sigma;
    if y == 0 {
        let grad = if dev > 0.0 {
            inv_sigma
        } else if dev < 0.0 {
            -inv_sigma
        } else {
            0.0
        };
        Ok((dev.abs(), grad))
    } else if dev < cfg.a_margin {
        Ok((cfg.a_margin - dev, -inv_sigma))
    } else {
        Ok((0.0, 0.0))
    }
}

/// Returns the loss and its gradient with respect to `q`. The gradient is
/// zero whenever `q` sits exactly on the center.
pub fn oneclass_loss(q: &[f64], y: u8, center: &Center, cfg: &LossConfig) -> Result<(f64, Vec<f64>)> {
    check_label(y)?;
    if q.len() != center.dim() {
        return Err(Error::shape("oneclass_loss", q.len(), center.dim()));
    }
    let d = center.distance(q);
    let unit = |sign: f64| -> Vec<f64> {
        if d == 0.0 {
            vec![0.0; q.len()]
        } else {
            q.iter()
                .zip(center.as_slice())
                .map(|(a, n)| sign * (a - n) / d)
                .collect()
        }
    };
    if y == 0 {
        Ok((d, unit(1.0)))
    } else if d < cfg.m_margin {
        Ok((cfg.m_margin - d, unit(-1.0)))
    } else {
        Ok((0.0, vec![0.0; q.len()]))
    }
}

/// Which auxiliary terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub deviation: bool,
    pub one_class: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        deviation: true,
        one_class: true,
    };
    pub const NONE: LossTerms = LossTerms {
        deviation: false,
        one_class: false,
    };
}

/// Batch-mean losses and per-sample output gradients (already divided by
/// the batch size). Disabled terms report 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBundle {
    pub l_e: f64,
    pub l_a: f64,
    pub l_o: f64,
    pub total: f64,
    pub d_p: Vec<f64>,
    pub d_score: Vec<f64>,
    pub d_q: Matrix,
}

pub fn total_batch_loss(
    outputs: &Outputs,
    labels: &[u8],
    cfg: &LossConfig,
    center: &Center,
    terms: LossTerms,
) -> Result<LossBundle> {
    let batch = labels.len();
    if batch == 0 {
        return Err(Error::Batch("empty batch".into()));
    }
    if outputs.p.len() != batch || outputs.score.len() != batch || outputs.q.rows() != batch {
        return Err(Error::Batch(format!(
            "{} labels for {} outputs",
            batch,
            outputs.p.len()
        )));
    }
    let inv_b = 1.0 / batch as f64;
    let m = outputs.q.cols();
    let mut bundle = LossBundle {
        l_e: 0.0,
        l_a: 0.0,
        l_o: 0.0,
        total: 0.0,
        d_p: vec![0.0; batch],
        d_score: vec![0.0; batch],
        d_q: Matrix::zeros(batch, m),
    };
    for (b, &y) in labels.iter().enumerate() {
        let (le, dp) = bce(outputs.p[b], y)?;
        bundle.l_e += le;
        bundle.d_p[b] = dp * inv_b;
        if terms.deviation {
            let (la, ds) = deviation_loss(outputs.score[b], y, cfg)?;
            bundle.l_a += la;
            bundle.d_score[b] = cfg.alpha * ds * inv_b;
        }
        if terms.one_class {
            let (lo, dq) = oneclass_loss(outputs.q.row(b), y, center, cfg)?;
            bundle.l_o += lo;
            for (dst, g) in bundle.d_q.row_mut(b).iter_mut().zip(dq) {
                *dst = cfg.beta * g * inv_b;
            }
        }
    }
    bundle.l_e *= inv_b;
    bundle.l_a *= inv_b;
    bundle.l_o *= inv_b;
    bundle.total = bundle.l_e + cfg.alpha * bundle.l_a + cfg.beta * bundle.l_o;
    Ok(bundle)
}
