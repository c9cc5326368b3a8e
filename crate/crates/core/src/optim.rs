//! RMSprop.
//!
//! ```text
//! v ← ρ v + (1 − ρ) g²
//! θ ← θ − lr · g / (√v + eps)
//! ```

use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::network::NetworkParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
    /// Rescale the gradient to at most this global L2 norm. Off by default.
    pub clip_norm: Option<f64>,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            lr: 0.001,
            rho: 0.9,
            eps: 1e-7,
            clip_norm: None,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.rho)
            && self.eps > 0.0
            && self.clip_norm.is_none_or(|c| c > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer config: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    config: RmsPropConfig,
    accum: Vec<Matrix>,
}

impl RmsProp {
    /// Zero accumulators shaped like `shapes`.
    pub fn new(config: RmsPropConfig, shapes: &[&Matrix]) -> Result<Self> {
        config.validate()?;
        let accum = shapes.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Ok(RmsProp { config, accum })
    }

    pub fn for_network(config: RmsPropConfig, params: &NetworkParams) -> Result<Self> {
        RmsProp::new(config, &params.tensors())
    }

    pub fn config(&self) -> &RmsPropConfig {
        &self.config
    }

    /// Accumulated squared-gradient averages, one per tensor.
    pub fn accumulators(&self) -> &[Matrix] {
        &self.accum
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != self.accum.len() || grads.len() != self.accum.len() {
            return Err(Error::shape(
                "rmsprop",
                format!("{} tensors", params.len()),
                format!("{} gradients / {} accumulators", grads.len(), self.accum.len()),
            ));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.accum) {
            if !p.same_shape(g) || !p.same_shape(v) {
                return Err(Error::shape("rmsprop", p.shape_str(), g.shape_str()));
            }
        }
        let mut sq = 0.0;
        for g in grads {
            for &x in g.as_slice() {
                if !x.is_finite() {
                    return Err(Error::Divergence {
                        epoch: 0,
                        batch: 0,
                        reason: "non-finite gradient".into(),
                    });
                }
                sq += x * x;
            }
        }
        let scale = match self.config.clip_norm {
            Some(c) if sq.sqrt() > c => c / sq.sqrt(),
            _ => 1.0,
        };

        let RmsPropConfig { lr, rho, eps, .. } = self.config;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.accum) {
            for ((theta, &gi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(v.as_mut_slice())
            {
                let gi = gi * scale;
                *vi = rho * *vi + (1.0 - rho) * gi * gi;
                *theta -= lr * gi / (vi.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step_network(&mut self, params: &mut NetworkParams, grads: &NetworkParams) -> Result<()> {
        let grads = grads.tensors();
        self.step(&mut params.tensors_mut(), &grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_opt() -> RmsProp {
        RmsProp::new(RmsPropConfig::default(), &[&Matrix::scalar(0.0)]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_accumulator() {
        let mut opt = scalar_opt();
        let mut theta = Matrix::scalar(1.0);
        opt.step(&mut [&mut theta], &[&Matrix::scalar(1.0)]).unwrap();
        let v_before = opt.accumulators()[0].as_slice()[0];
        let theta_before = theta.clone();
        opt.step(&mut [&mut theta], &[&Matrix::scalar(0.0)]).unwrap();
        assert_eq!(theta, theta_before);
        assert!((opt.accumulators()[0].as_slice()[0] - 0.9 * v_before).abs() < 1e-18);
    }

    #[test]
    fn one_step_arithmetic() {
        let mut opt = scalar_opt();
        let mut theta = Matrix::scalar(1.0);
        opt.step(&mut [&mut theta], &[&Matrix::scalar(1.0)]).unwrap();
        assert!((opt.accumulators()[0].as_slice()[0] - 0.1).abs() < 1e-15);
        let want = 1.0 - 0.001 / (0.1f64.sqrt() + 1e-7);
        assert!((theta.as_slice()[0] - want).abs() < 1e-15);
        assert!((theta.as_slice()[0] - 0.996_837_7).abs() < 1e-7);
    }

    #[test]
    fn descends_convex_quadratic() {
        let mut opt = RmsProp::new(RmsPropConfig { lr: 0.01, ..Default::default() }, &[&Matrix::scalar(0.0)]).unwrap();
        let mut theta = Matrix::scalar(1.0);
        let mut prev = 1.0f64;
        for _ in 0..100 {
            let g = Matrix::scalar(2.0 * theta.as_slice()[0]);
            opt.step(&mut [&mut theta], &[&g]).unwrap();
            let now = theta.as_slice()[0].abs();
            assert!(now < prev);
            prev = now;
        }
        assert!(prev < 0.5, "{prev}");
    }

    #[test]
    fn shape_and_divergence_errors() {
        let mut opt = scalar_opt();
        let mut theta = Matrix::scalar(1.0);
        assert!(matches!(opt.step(&mut [&mut theta], &[&Matrix::zeros(1, 2)]), Err(Error::Shape { .. })));
        assert!(matches!(
            opt.step(&mut [&mut theta], &[&Matrix::scalar(f64::NAN)]),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn clipping_bounds_effective_gradient() {
        let cfg = RmsPropConfig { clip_norm: Some(1.0), ..Default::default() };
        let mut opt = RmsProp::new(cfg, &[&Matrix::zeros(1, 2)]).unwrap();
        let mut theta = Matrix::zeros(1, 2);
        opt.step(&mut [&mut theta], &[&Matrix::row_vector(vec![30.0, 40.0])]).unwrap();
        // clipped to (0.6, 0.8)
        let v = opt.accumulators()[0].as_slice();
        assert!((v[0] - 0.1 * 0.36).abs() < 1e-12 && (v[1] - 0.1 * 0.64).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn accumulators_stay_nonnegative(gs in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let mut opt = scalar_opt();
            let mut theta = Matrix::scalar(0.5);
            for g in gs {
                opt.step(&mut [&mut theta], &[&Matrix::scalar(g)]).unwrap();
                prop_assert!(opt.accumulators()[0].as_slice()[0] >= 0.0);
            }
        }

        #[test]
        fn first_step_is_bounded(g in -1e6f64..1e6) {
            let mut opt = scalar_opt();
            let mut theta = Matrix::scalar(0.0);
            opt.step(&mut [&mut theta], &[&Matrix::scalar(g)]).unwrap();
            let bound = 0.001 / (1.0f64 - 0.9).sqrt();
            prop_assert!(theta.as_slice()[0].abs() <= bound + 1e-12);
        }

        #[test]
        fn trajectory_is_deterministic(gs in proptest::collection::vec(-5.0f64..5.0, 1..20)) {
            let run = || {
                let mut opt = scalar_opt();
                let mut theta = Matrix::scalar(0.1);
                for &g in &gs {
                    opt.step(&mut [&mut theta], &[&Matrix::scalar(g)]).unwrap();
                }
                theta.as_slice()[0].to_bits()
            };
            prop_assert_eq!(run(), run());
        }
    }
}
