use crate::error::{Error, Result};

use super::network::{Gradients, LayerParams, ModelParams};
use super::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the model parameters.
#[derive(Debug, Clone)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Vec<LayerParams<T>>,
    pub v: Vec<LayerParams<T>>,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(model: &ModelParams<T>, hyper: AdamHyper) -> Self {
        Self {
            step: 0,
            m: model.zero_gradients(),
            v: model.zero_gradients(),
            hyper,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Scalar>(
    model: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    let shapes_match = grads.len() == model.params.len()
        && state.m.len() == model.params.len()
        && model.params.iter().zip(grads).zip(&state.m).all(|((p, g), m)| {
            p.weights.len() == g.weights.len()
                && p.bias.len() == g.bias.len()
                && m.weights.len() == p.weights.len()
                && m.bias.len() == p.bias.len()
        });
    if !shapes_match {
        return Err(Error::Shape("gradients do not match parameters".into()));
    }
    state.step += 1;
    let h = state.hyper;
    let t = state.step as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    let (b1, b2) = (T::from_f64(h.beta1), T::from_f64(h.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - h.beta1), T::from_f64(1.0 - h.beta2));
    let (c1, c2) = (T::from_f64(c1), T::from_f64(c2));
    let (lr, eps) = (T::from_f64(h.lr), T::from_f64(h.eps));
    for (((p, g), m), v) in model
        .params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((w, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + one_b1 * g;
            *v = b2 * *v + one_b2 * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
