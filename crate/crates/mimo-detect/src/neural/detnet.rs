//! Unfolded projected-gradient detector. Each layer mixes the previous
//! estimate with the matched filter H^T y and the Gram correction H^T H x,
//! lifts through a relu stage, and emits a one-hot estimate plus an
//! auxiliary state vector, with residual mixing between layers.

use super::{init_weight, matmul_std, Parametrized};
use crate::channel::{RngStream, Sample};
use crate::constellation::{soft_decode_batch, Constellation};
use crate::{Error, Result};
use ndarray::{s, Array1, Array2, ArrayView1, Axis};

#[derive(Clone, Debug)]
pub struct DetNetLayer {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
    pub delta1: f64,
    pub delta2: f64,
}

#[derive(Clone, Debug)]
pub struct DetNetParams {
    pub dx: usize,
    pub dy: usize,
    pub onehot_dim: usize,
    /// Width of the lifted relu stage.
    pub zw: usize,
    /// Width of the auxiliary state carried between layers.
    pub vw: usize,
    /// Residual mixing weight on the new layer output.
    pub eta: f64,
    pub layers: Vec<DetNetLayer>,
}

impl DetNetParams {
    pub fn zeros(
        dx: usize,
        dy: usize,
        onehot_dim: usize,
        layers: usize,
        zw: usize,
        vw: usize,
        eta: f64,
    ) -> Result<Self> {
        if dx == 0 || dy == 0 || onehot_dim < 2 || zw == 0 || vw == 0 || layers == 0 {
            return Err(Error::Config("detnet dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Config(format!("eta must lie in [0,1], got {eta}")));
        }
        let oh = onehot_dim * dx;
        let cat = dx + vw;
        let layer = |_| DetNetLayer {
            w1: Array2::zeros((zw, cat)),
            b1: Array1::zeros(zw),
            w2: Array2::zeros((oh, zw)),
            b2: Array1::zeros(oh),
            w3: Array2::zeros((vw, zw)),
            b3: Array1::zeros(vw),
            delta1: 0.0,
            delta2: 0.0,
        };
        Ok(DetNetParams {
            dx,
            dy,
            onehot_dim,
            zw,
            vw,
            eta,
            layers: (0..layers).map(layer).collect(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dx: usize,
        dy: usize,
        onehot_dim: usize,
        layers: usize,
        zw: usize,
        vw: usize,
        eta: f64,
        rng: &mut RngStream,
    ) -> Self {
        let mut p = Self::zeros(dx, dy, onehot_dim, layers, zw, vw, eta)
            .expect("caller passes positive dims");
        let cat = dx + vw;
        let oh = onehot_dim * dx;
        for l in &mut p.layers {
            for v in l.w1.iter_mut() {
                *v = init_weight(rng, cat, zw);
            }
            for v in l.w2.iter_mut() {
                *v = init_weight(rng, zw, oh);
            }
            for v in l.w3.iter_mut() {
                *v = init_weight(rng, zw, vw);
            }
            l.delta1 = 1e-2;
            l.delta2 = 1e-2;
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.dx,
            self.dy,
            self.onehot_dim,
            self.layers.len(),
            self.zw,
            self.vw,
            self.eta,
        )
        .expect("own dims are valid")
    }

    pub fn oh_len(&self) -> usize {
        self.onehot_dim * self.dx
    }
}

impl Parametrized for DetNetParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(8 * self.layers.len());
        for l in &self.layers {
            out.push(l.w1.as_slice().expect("standard layout"));
            out.push(l.b1.as_slice().expect("standard layout"));
            out.push(l.w2.as_slice().expect("standard layout"));
            out.push(l.b2.as_slice().expect("standard layout"));
            out.push(l.w3.as_slice().expect("standard layout"));
            out.push(l.b3.as_slice().expect("standard layout"));
            out.push(std::slice::from_ref(&l.delta1));
            out.push(std::slice::from_ref(&l.delta2));
        }
        out
    }
    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(8 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.w1.as_slice_mut().expect("standard layout"));
            out.push(l.b1.as_slice_mut().expect("standard layout"));
            out.push(l.w2.as_slice_mut().expect("standard layout"));
            out.push(l.b2.as_slice_mut().expect("standard layout"));
            out.push(l.w3.as_slice_mut().expect("standard layout"));
            out.push(l.b3.as_slice_mut().expect("standard layout"));
            out.push(std::slice::from_mut(&mut l.delta1));
            out.push(std::slice::from_mut(&mut l.delta2));
        }
        out
    }
}

/// Forward pass intermediates for one batch, kept for the backward pass
/// and per-layer evaluation.
#[derive(Clone, Debug)]
pub struct DetNetState {
    /// H^T y per sample, stacked as columns.
    pub hty: Array2<f64>,
    /// H^T H per sample.
    pub grams: Vec<Array2<f64>>,
    pub cat: Vec<Array2<f64>>,
    pub z: Vec<Array2<f64>>,
    /// Residual-mixed one-hot estimate per layer.
    pub xoh: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    /// Soft-decoded estimate per layer.
    pub xh: Vec<Array2<f64>>,
}

fn add_column_bias(z: &mut Array2<f64>, b: &Array1<f64>) {
    for mut col in z.axis_iter_mut(Axis(1)) {
        col += b;
    }
}

fn check_compat(p: &DetNetParams, c: &Constellation) -> Result<()> {
    if c.onehot_dim != p.onehot_dim {
        return Err(Error::Config(format!(
            "network expects one-hot blocks of {}, constellation {} has {}",
            p.onehot_dim, c.kind, c.onehot_dim
        )));
    }
    Ok(())
}

fn forward_from_stats(
    p: &DetNetParams,
    c: &Constellation,
    hty: Array2<f64>,
    grams: Vec<Array2<f64>>,
) -> Result<DetNetState> {
    let bsz = hty.ncols();
    let (dx, vw, eta) = (p.dx, p.vw, p.eta);
    let nl = p.layers.len();
    let mut state = DetNetState {
        hty,
        grams,
        cat: Vec::with_capacity(nl),
        z: Vec::with_capacity(nl),
        xoh: Vec::with_capacity(nl),
        v: Vec::with_capacity(nl),
        xh: Vec::with_capacity(nl),
    };
    for (k, l) in p.layers.iter().enumerate() {
        let mut cat = Array2::<f64>::zeros((dx + vw, bsz));
        if k == 0 {
            // x0 = 0, v0 = 0: only the matched-filter term survives
            let q = &state.hty * (-l.delta1);
            cat.slice_mut(s![0..dx, ..]).assign(&q);
        } else {
            let xh_prev = &state.xh[k - 1];
            for b in 0..bsz {
                let xp = xh_prev.column(b).to_owned();
                let gx = state.grams[b].dot(&xp);
                for i in 0..dx {
                    cat[[i, b]] = xp[i] - l.delta1 * state.hty[[i, b]] + l.delta2 * gx[i];
                }
            }
            cat.slice_mut(s![dx.., ..]).assign(&state.v[k - 1]);
        }
        let mut z = l.w1.dot(&cat);
        add_column_bias(&mut z, &l.b1);
        z.mapv_inplace(|v| v.max(0.0));

        let mut raw_oh = l.w2.dot(&z);
        add_column_bias(&mut raw_oh, &l.b2);
        let mut raw_v = l.w3.dot(&z);
        add_column_bias(&mut raw_v, &l.b3);

        let xoh = if k == 0 {
            raw_oh * eta
        } else {
            raw_oh * eta + &state.xoh[k - 1] * (1.0 - eta)
        };
        let v = if k == 0 {
            raw_v * eta
        } else {
            raw_v * eta + &state.v[k - 1] * (1.0 - eta)
        };
        let xh = soft_decode_batch(&xoh, c)?;

        state.cat.push(cat);
        state.z.push(z);
        state.xoh.push(xoh);
        state.v.push(v);
        state.xh.push(xh);
    }
    Ok(state)
}

/// Batched forward pass over complete samples.
pub fn detnet_forward_batch(
    p: &DetNetParams,
    c: &Constellation,
    batch: &[Sample],
) -> Result<DetNetState> {
    check_compat(p, c)?;
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let bsz = batch.len();
    let mut hty = Array2::<f64>::zeros((p.dx, bsz));
    let mut grams = Vec::with_capacity(bsz);
    for (i, smp) in batch.iter().enumerate() {
        if smp.h.dim() != (p.dy, p.dx) {
            return Err(Error::Config(format!(
                "sample {i} channel is {:?} but the network expects ({}, {})",
                smp.h.dim(),
                p.dy,
                p.dx
            )));
        }
        hty.column_mut(i).assign(&smp.h.t().dot(&smp.y));
        grams.push(smp.h.t().dot(&smp.h));
    }
    forward_from_stats(p, c, hty, grams)
}

/// Single-instance forward pass; returns the one-hot estimate of every
/// layer so callers can exit early at any depth.
pub fn detnet_forward(
    p: &DetNetParams,
    c: &Constellation,
    h: &Array2<f64>,
    y: &ArrayView1<f64>,
) -> Result<Vec<Array1<f64>>> {
    check_compat(p, c)?;
    if h.dim() != (p.dy, p.dx) || y.len() != p.dy {
        return Err(Error::Config(format!(
            "inputs are {:?} / {} but the network expects ({}, {})",
            h.dim(),
            y.len(),
            p.dy,
            p.dx
        )));
    }
    let hty = h.t().dot(&y.to_owned());
    let hty = hty.into_shape_with_order((p.dx, 1)).expect("column reshape");
    let grams = vec![h.t().dot(h)];
    let state = forward_from_stats(p, c, hty, grams)?;
    Ok(state.xoh.iter().map(|m| m.column(0).to_owned()).collect())
}

/// Weight of layer l (1-based) in the multi-layer loss. The default is a
/// literal natural log, so layer 1 carries zero weight; the offset variant
/// uses log(l+1) instead.
pub fn layer_weight(l: usize, log_offset: bool) -> f64 {
    if log_offset {
        ((l + 1) as f64).ln()
    } else {
        (l as f64).ln()
    }
}

/// Log-weighted sum of per-layer squared errors.
pub fn detnet_loss(x_oh: &ArrayView1<f64>, outputs: &[Array1<f64>]) -> f64 {
    outputs
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let d: f64 = x_oh
                .iter()
                .zip(o.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            layer_weight(i + 1, false) * d
        })
        .sum()
}

/// Mean multi-layer loss over the batch and its exact gradient.
pub fn detnet_gradient(
    p: &DetNetParams,
    c: &Constellation,
    batch: &[Sample],
    log_offset: bool,
) -> Result<(f64, DetNetParams)> {
    let state = detnet_forward_batch(p, c, batch)?;
    let bsz = batch.len();
    let oh = p.oh_len();
    let mut t = Array2::<f64>::zeros((oh, bsz));
    for (i, smp) in batch.iter().enumerate() {
        if smp.x_oh.len() != oh {
            return Err(Error::Config(format!(
                "sample {i} one-hot length {} does not match network {}",
                smp.x_oh.len(),
                oh
            )));
        }
        t.column_mut(i).assign(&smp.x_oh);
    }

    let nl = p.layers.len();
    let mut per_sample = vec![0.0f64; bsz];
    for k in 0..nl {
        let w = layer_weight(k + 1, log_offset);
        if w == 0.0 {
            continue;
        }
        let diff = &state.xoh[k] - &t;
        for (b, col) in diff.axis_iter(Axis(1)).enumerate() {
            per_sample[b] += w * col.dot(&col);
        }
    }
    for (b, l) in per_sample.iter().enumerate() {
        if !l.is_finite() {
            return Err(Error::NonFinite { sample: b });
        }
    }
    let loss = per_sample.iter().sum::<f64>() / bsz as f64;

    let mut grads = p.zeros_like();
    let eta = p.eta;
    let mut carry_xoh = Array2::<f64>::zeros((oh, bsz));
    let mut carry_v = Array2::<f64>::zeros((p.vw, bsz));
    for k in (0..nl).rev() {
        let l = &p.layers[k];
        let g = &mut grads.layers[k];
        let ck = layer_weight(k + 1, log_offset);

        let mut gxoh = carry_xoh;
        if ck != 0.0 {
            gxoh += &((&state.xoh[k] - &t) * (2.0 * ck / bsz as f64));
        }
        let gv = carry_v;

        let groh = &gxoh * eta;
        let grv = &gv * eta;
        g.w2 = matmul_std(groh.view(), state.z[k].t());
        g.b2 = groh.sum_axis(Axis(1));
        g.w3 = matmul_std(grv.view(), state.z[k].t());
        g.b3 = grv.sum_axis(Axis(1));

        let mut ga = l.w2.t().dot(&groh) + l.w3.t().dot(&grv);
        ga.zip_mut_with(&state.z[k], |gg, &zz| {
            if zz <= 0.0 {
                *gg = 0.0;
            }
        });
        g.w1 = matmul_std(ga.view(), state.cat[k].t());
        g.b1 = ga.sum_axis(Axis(1));

        let gcat = l.w1.t().dot(&ga);
        let gq = gcat.slice(s![0..p.dx, ..]);
        let gv_from_cat = gcat.slice(s![p.dx.., ..]);

        g.delta1 = -state
            .hty
            .iter()
            .zip(gq.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>();

        if k > 0 {
            let xh_prev = &state.xh[k - 1];
            let mut gxh_prev = Array2::<f64>::zeros((p.dx, bsz));
            for b in 0..bsz {
                let gq_col = gq.column(b).to_owned();
                let gram = &state.grams[b];
                let smoothed = gram.dot(&gq_col);
                let xp = xh_prev.column(b).to_owned();
                g.delta2 += gram.dot(&xp).dot(&gq_col);
                for i in 0..p.dx {
                    gxh_prev[[i, b]] = gq_col[i] + l.delta2 * smoothed[i];
                }
            }
            // adjoint of the block soft decode spreads each component
            // gradient over its one-hot slots, weighted by the symbols
            let mut next_xoh = gxoh * (1.0 - eta);
            for b in 0..bsz {
                for j in 0..p.dx {
                    let gj = gxh_prev[[j, b]];
                    for (i, &sym) in c.real_alphabet.iter().enumerate() {
                        next_xoh[[j * p.onehot_dim + i, b]] += sym * gj;
                    }
                }
            }
            carry_xoh = next_xoh;
            carry_v = gv * (1.0 - eta) + gv_from_cat;
        } else {
            // x0 and v0 are constants; delta2_1 multiplies G x0 = 0
            carry_xoh = Array2::zeros((oh, bsz));
            carry_v = Array2::zeros((p.vw, bsz));
        }
    }
    Ok((loss, grads))
}
