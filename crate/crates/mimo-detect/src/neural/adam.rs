//! Adam with bias-corrected moment estimates.

use super::Parametrized;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators, aligned with the flat tensor order of one model.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(num_params: usize, hyper: AdamHyper) -> Self {
        AdamState {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            hyper,
        }
    }
}

/// One optimizer step; `grads` must mirror `params` tensor for tensor.
pub fn adam_step<P: Parametrized>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState,
) -> Result<()> {
    if params.num_params() != state.m.len() || grads.num_params() != state.m.len() {
        return Err(Error::Internal(format!(
            "adam state holds {} entries but model has {}",
            state.m.len(),
            params.num_params()
        )));
    }
    state.step += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.step as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step as i32);
    let mut off = 0usize;
    let grad_tensors = grads.tensors();
    for (pt, gt) in params.tensors_mut().into_iter().zip(grad_tensors) {
        for (pv, &gv) in pt.iter_mut().zip(gt.iter()) {
            let m = h.beta1 * state.m[off] + (1.0 - h.beta1) * gv;
            let v = h.beta2 * state.v[off] + (1.0 - h.beta2) * gv * gv;
            state.m[off] = m;
            state.v[off] = v;
            *pv -= h.lr * (m / bc1) / ((v / bc2).sqrt() + h.eps);
            off += 1;
        }
    }
    Ok(())
}
