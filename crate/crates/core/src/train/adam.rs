use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Per-array first and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            m: params.grad_buffers(),
            v: params.grad_buffers(),
        }
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.v
    }
}

/// One bias-corrected Adam step over every array, then zeroes gradients.
pub fn adam_update(params: &mut ModelParams, state: &mut AdamState, lr: f64) -> Result<()> {
    let matches = state.m.len() == params.arrays.len()
        && state.m.iter().zip(&params.arrays).all(|(m, p)| m.len() == p.len());
    if !matches {
        return Err(Error::State("optimizer state was not initialized for these parameters".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, m), v) in params.arrays.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.value.len() {
            let g = p.grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.value[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        p.grad.fill(0.0);
    }
    Ok(())
}
