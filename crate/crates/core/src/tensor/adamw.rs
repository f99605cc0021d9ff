//! AdamW: Adam with decoupled weight decay.
//!
//! `p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * p`, with
//! bias-corrected moments. Moments are `f32`; the bias corrections are formed in `f64`.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            ..Self::default()
        }
    }

    /// One update of every parameter from its gradient; `params` and `grads` pair up by position.
    pub fn step(&self, state: &mut AdamWState, params: &mut [&mut Tensor], grads: &[&[f32]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if state.m.is_empty() {
            state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            state.v = state.m.clone();
        }
        if state.m.len() != params.len() {
            return Err(Error::dim("optimizer state does not match parameter list"));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::dim(format!(
                    "parameter of {} values paired with gradient of {}",
                    p.len(),
                    g.len()
                )));
            }
        }
        state.t += 1;
        let t = state.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = self.lr * self.weight_decay;
        // m_hat / (sqrt(v_hat) + eps) with the bias corrections folded into two scalars.
        let step_size = self.lr / bc1;
        let inv_sqrt_bc2 = 1.0 / bc2.sqrt();
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let (c1, c2) = ((1.0 - self.beta1) as f32, (1.0 - self.beta2) as f32);
        let (step_size, inv_sqrt_bc2, eps, decay) =
            (step_size as f32, inv_sqrt_bc2 as f32, self.eps as f32, decay as f32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let mn = b1 * *mv + c1 * gv;
                let vn = b2 * *vv + c2 * (gv * gv);
                *mv = mn;
                *vv = vn;
                let old = *pv;
                *pv = old - step_size * mn / (vn.sqrt() * inv_sqrt_bc2 + eps) - decay * old;
            }
        }
        Ok(())
    }
}

/// Per-parameter first/second moments and the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamWState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl AdamWState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f32>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f32>] {
        &self.v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(p: f32) -> Tensor {
        Tensor::new(vec![1], vec![p]).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let opt = AdamW::new(1e-3, 0.0);
        let mut state = AdamWState::new();
        let mut p = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let before = p.clone();
        for _ in 0..5 {
            opt.step(&mut state, &mut [&mut p], &[&[0.0, 0.0, 0.0]]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(state.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // At t = 1 the bias corrections cancel: m_hat = g, v_hat = g^2.
        let opt = AdamW::new(1e-4, 0.0);
        let mut state = AdamWState::new();
        let mut p = one(0.0);
        opt.step(&mut state, &mut [&mut p], &[&[1.0]]).unwrap();
        let expected = -1e-4 * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] as f64 - expected).abs() < 1e-9, "{}", p.data()[0]);
    }

    #[test]
    fn decoupled_decay_is_geometric() {
        let opt = AdamW::new(1e-2, 0.5);
        let mut state = AdamWState::new();
        let mut p = one(1.0);
        let mut expected = 1.0f64;
        for _ in 0..20 {
            opt.step(&mut state, &mut [&mut p], &[&[0.0]]).unwrap();
            expected *= 1.0 - 1e-2 * 0.5;
            assert!((p.data()[0] as f64 - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let opt = AdamW::default();
        let mut state = AdamWState::new();
        let mut p = one(0.0);
        assert!(opt.step(&mut state, &mut [&mut p], &[&[1.0, 2.0]]).is_err());
    }
}
