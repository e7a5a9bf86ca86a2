//! Learned detectors: parameter containers, forward passes, losses, exact
//! reverse-mode gradients, the Adam optimizer, and checkpoint files.

mod adam;
mod checkpoint;
mod detnet;
mod fullycon;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, params_from_meta, save_checkpoint, AdamMeta, CheckpointMeta};
pub use detnet::{
    detnet_forward, detnet_forward_batch, detnet_gradient, detnet_loss, layer_weight,
    DetNetLayer, DetNetParams, DetNetState,
};
pub use fullycon::{
    fullycon_forward, fullycon_forward_batch, fullycon_gradient, fullycon_loss, FullyConParams,
};

use crate::channel::RngStream;
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};
use rand::Rng;

/// Ordered flat access to every learnable tensor; the order is the
/// declaration order and is shared by gradients, Adam state, and
/// checkpoint files.
pub trait Parametrized {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Either architecture, as stored in a checkpoint.
#[derive(Clone, Debug)]
pub enum NetworkParams {
    FullyCon(FullyConParams),
    DetNet(DetNetParams),
}

impl NetworkParams {
    pub fn architecture_name(&self) -> &'static str {
        match self {
            NetworkParams::FullyCon(_) => "fullycon",
            NetworkParams::DetNet(_) => "detnet",
        }
    }
}

impl Parametrized for NetworkParams {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            NetworkParams::FullyCon(p) => p.tensors(),
            NetworkParams::DetNet(p) => p.tensors(),
        }
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            NetworkParams::FullyCon(p) => p.tensors_mut(),
            NetworkParams::DetNet(p) => p.tensors_mut(),
        }
    }
}

/// Matrix product with a guaranteed standard-layout result. `dot` hands
/// back column-major storage when both operands have unit row stride,
/// which breaks the flat tensor views; gradient code goes through here.
pub(crate) fn matmul_std(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut c = Array2::zeros((a.nrows(), b.ncols()));
    general_mat_mul(1.0, &a, &b, 0.0, &mut c);
    c
}

/// Fan-balanced uniform init bound sqrt(6 / (fan_in + fan_out)).
pub(crate) fn init_weight(rng: &mut RngStream, fan_in: usize, fan_out: usize) -> f64 {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.gen_range(-bound..bound)
}

/// Largest relative disagreement between an analytic gradient and central
/// finite differences of `loss` at `p`, using the given step.
pub fn finite_difference_max_rel_err<P, F>(p: &P, analytic: &P, step: f64, mut loss: F) -> f64
where
    P: Parametrized + Clone,
    F: FnMut(&P) -> f64,
{
    let mut worst = 0.0f64;
    let n_tensors = p.tensors().len();
    for t in 0..n_tensors {
        let len = p.tensors()[t].len();
        for i in 0..len {
            let mut plus = p.clone();
            plus.tensors_mut()[t][i] += step;
            let lp = loss(&plus);
            let mut minus = p.clone();
            minus.tensors_mut()[t][i] -= step;
            let lm = loss(&minus);
            let gf = (lp - lm) / (2.0 * step);
            let ga = analytic.tensors()[t][i];
            let rel = (ga - gf).abs() / ga.abs().max(gf.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}
