//! Plain fully connected detector: relu hidden layers, affine output.

use super::{init_weight, matmul_std, Parametrized};
use crate::channel::{RngStream, Sample};
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, Axis};

#[derive(Clone, Debug)]
pub struct FullyConParams {
    /// Layer widths from input to output, length L+1.
    pub dims: Vec<usize>,
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl FullyConParams {
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!(
                "need at least two nonzero layer widths, got {dims:?}"
            )));
        }
        let w = dims
            .windows(2)
            .map(|d| Array2::zeros((d[1], d[0])))
            .collect();
        let b = dims[1..].iter().map(|&d| Array1::zeros(d)).collect();
        Ok(FullyConParams {
            dims: dims.to_vec(),
            w,
            b,
        })
    }

    pub fn new(dims: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut p = Self::zeros(dims)?;
        for (wk, d) in p.w.iter_mut().zip(dims.windows(2)) {
            for v in wk.iter_mut() {
                *v = init_weight(rng, d[0], d[1]);
            }
        }
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims).expect("own dims are valid")
    }

    pub fn layer_count(&self) -> usize {
        self.w.len()
    }
}

impl Parametrized for FullyConParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.w.len());
        for (w, b) in self.w.iter().zip(self.b.iter()) {
            out.push(w.as_slice().expect("standard layout"));
            out.push(b.as_slice().expect("standard layout"));
        }
        out
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.w.len());
        for (w, b) in self.w.iter_mut().zip(self.b.iter_mut()) {
            out.push(w.as_slice_mut().expect("standard layout"));
            out.push(b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

fn add_column_bias(z: &mut Array2<f64>, b: &Array1<f64>) {
    for mut col in z.axis_iter_mut(Axis(1)) {
        col += b;
    }
}

/// Batch forward over column-stacked inputs; returns the raw one-hot
/// estimates (no output nonlinearity).
pub fn fullycon_forward_batch(p: &FullyConParams, y: &Array2<f64>) -> Result<Array2<f64>> {
    let (acts, out) = forward_with_state(p, y)?;
    drop(acts);
    Ok(out)
}

/// Single-sample forward.
pub fn fullycon_forward(p: &FullyConParams, y: &ArrayView1<f64>) -> Result<Array1<f64>> {
    let col = y
        .to_owned()
        .into_shape_with_order((y.len(), 1))
        .expect("column reshape");
    let out = fullycon_forward_batch(p, &col)?;
    Ok(out.column(0).to_owned())
}

/// Returns relu activations per layer (entry 0 is the input) plus the
/// affine output of the last layer.
fn forward_with_state(
    p: &FullyConParams,
    y: &Array2<f64>,
) -> Result<(Vec<Array2<f64>>, Array2<f64>)> {
    if y.nrows() != p.dims[0] {
        return Err(Error::Config(format!(
            "input has {} rows but the first layer expects {}",
            y.nrows(),
            p.dims[0]
        )));
    }
    let l = p.w.len();
    let mut acts = Vec::with_capacity(l);
    acts.push(y.clone());
    for k in 0..l - 1 {
        let mut z = p.w[k].dot(&acts[k]);
        add_column_bias(&mut z, &p.b[k]);
        z.mapv_inplace(|v| v.max(0.0));
        acts.push(z);
    }
    let mut out = p.w[l - 1].dot(&acts[l - 1]);
    add_column_bias(&mut out, &p.b[l - 1]);
    Ok((acts, out))
}

/// Squared error between an encoded truth and a raw estimate.
pub fn fullycon_loss(x_oh: &ArrayView1<f64>, x_oh_hat: &ArrayView1<f64>) -> f64 {
    x_oh
        .iter()
        .zip(x_oh_hat.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Mean loss over the batch and its exact gradient.
pub fn fullycon_gradient(
    p: &FullyConParams,
    batch: &[Sample],
) -> Result<(f64, FullyConParams)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let bsz = batch.len();
    let dy = p.dims[0];
    let out_dim = *p.dims.last().expect("nonempty dims");
    let mut y = Array2::<f64>::zeros((dy, bsz));
    let mut t = Array2::<f64>::zeros((out_dim, bsz));
    for (i, s) in batch.iter().enumerate() {
        if s.y.len() != dy || s.x_oh.len() != out_dim {
            return Err(Error::Config(format!(
                "sample {i} has shape ({}, {}) but the network expects ({dy}, {out_dim})",
                s.y.len(),
                s.x_oh.len()
            )));
        }
        y.column_mut(i).assign(&s.y);
        t.column_mut(i).assign(&s.x_oh);
    }

    let (acts, out) = forward_with_state(p, &y)?;
    let diff = &out - &t;
    let mut loss = 0.0;
    for (i, col) in diff.axis_iter(Axis(1)).enumerate() {
        let li = col.dot(&col);
        if !li.is_finite() {
            return Err(Error::NonFinite { sample: i });
        }
        loss += li;
    }
    loss /= bsz as f64;

    let l = p.w.len();
    let mut grads = p.zeros_like();
    // mean loss: d/d_out = 2 (out - t) / B
    let mut delta = diff * (2.0 / bsz as f64);
    for k in (0..l).rev() {
        grads.w[k] = matmul_std(delta.view(), acts[k].t());
        grads.b[k] = delta.sum_axis(Axis(1));
        if k > 0 {
            let mut up = p.w[k].t().dot(&delta);
            up.zip_mut_with(&acts[k], |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            delta = up;
        }
    }
    Ok((loss, grads))
}
