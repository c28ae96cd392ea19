//! AdamW with decoupled weight decay.
//!
//! ```text
//! θ ← θ − lr·wd·θ
//! m ← β1·m + (1 − β1)·g
//! v ← β2·v + (1 − β2)·g²
//! θ ← θ − lr · m̂ / (√v̂ + ε),   m̂ = m / (1 − β1^t),  v̂ = v / (1 − β2^t)
//! ```
//!
//! Decay applies to every tensor, biases included.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::model::{Params, TENSOR_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    config: AdamWConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &Params<T>, config: AdamWConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![T::zero(); t.len()]).collect();
        AdamW {
            config,
            first: zeros(),
            second: zeros(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`. Leaves `params` untouched when a
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut Params<T>, grads: &Params<T>, lr: f64) -> Result<()> {
        for (name, g) in TENSOR_NAMES.iter().zip(grads.tensors()) {
            if let Some(row) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of {name}"),
                    row,
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - lr * c.weight_decay;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..p.len() {
                let gi = g[i].to_f64().unwrap();
                let mi = c.beta1 * m[i].to_f64().unwrap() + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v[i].to_f64().unwrap() + (1.0 - c.beta2) * gi * gi;
                m[i] = T::from_f64(mi);
                v[i] = T::from_f64(vi);
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + c.eps);
                p[i] = T::from_f64(p[i].to_f64().unwrap() * decay - update);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Architecture};

    fn tiny() -> Params<f64> {
        let arch = Architecture {
            seed_hidden: 3,
            seed_out: 2,
            guide_hidden: 2,
            guide_out: 2,
            ..Default::default()
        };
        init_params(2, 2, arch, 1).unwrap()
    }

    fn fill(p: &mut Params<f64>, v: f64) {
        for t in p.tensors_mut() {
            t.fill(v);
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut p = tiny();
        let before = p.clone();
        let g = p.zeros_like();
        let mut opt = AdamW::new(&p, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..5 {
            opt.step(&mut p, &g, 1e-3).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn scalar_trace_matches_hand_computation() {
        let mut p = tiny();
        fill(&mut p, 0.5);
        let mut g = p.zeros_like();
        fill(&mut g, 1.0);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(&p, cfg);
        opt.step(&mut p, &g, 1e-3).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction.
        let expect = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!(p.tensors().iter().all(|t| t.iter().all(|&v| (v - expect).abs() < 1e-15)));

        // Three more steps with g = 1, -2, 0.5 against a scalar replay.
        let (mut theta, mut m, mut v) = (expect, 0.1, 0.001);
        for (k, gk) in [(2, -2.0f64), (3, 0.5), (4, 1.0)] {
            fill(&mut g, gk);
            opt.step(&mut p, &g, 1e-3).unwrap();
            m = 0.9 * m + 0.1 * gk;
            v = 0.999 * v + 0.001 * gk * gk;
            let mh = m / (1.0 - 0.9f64.powi(k));
            let vh = v / (1.0 - 0.999f64.powi(k));
            theta -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p.output.bias[0] - theta).abs() < 1e-14);
    }

    #[test]
    fn decoupled_decay_in_isolation() {
        let mut p = tiny();
        fill(&mut p, 2.0);
        let g = p.zeros_like();
        let mut opt = AdamW::new(&p, AdamWConfig { weight_decay: 0.1, ..Default::default() });
        for _ in 0..3 {
            opt.step(&mut p, &g, 0.01).unwrap();
        }
        let expect = 2.0 * (1.0 - 0.01 * 0.1f64).powi(3);
        assert!(p.tensors().iter().all(|t| t.iter().all(|&v| (v - expect).abs() < 1e-14)));
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = tiny();
        let mut g = p.zeros_like();
        g.guide_out.bias[1] = f64::NAN;
        let before = p.clone();
        let mut opt = AdamW::new(&p, AdamWConfig::default());
        let err = opt.step(&mut p, &g, 1e-3).unwrap_err();
        assert!(err.to_string().contains("guide_out.bias"), "{err}");
        assert_eq!(p, before);
        assert_eq!(opt.steps_taken(), 0);
    }
}
