//! Classical detectors and exact oracles: zero forcing, exhaustive ML,
//! Bayes posteriors, AMP, and the sphere decoder family.

mod amp;
mod mbest;
mod sphere;

pub use amp::{amp_detect, AmpConfig};
pub use mbest::mbest_soft;
pub use sphere::sphere_decode;

use crate::constellation::{hard_round, Constellation};
use crate::linalg::{qr_thin, solve_upper};
use crate::{Error, Result};
use ndarray::{Array1, Array2};

/// Enumeration guard: refuse exhaustive searches beyond 2^24 candidates.
pub const MAX_ENUMERATION: f64 = (1u64 << 24) as f64;

/// Per-call counters reported alongside detector decisions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectorMetadata {
    pub iterations: Option<usize>,
    pub nodes_visited: Option<u64>,
    pub diverged: bool,
}

/// A hard decision plus (when the detector produces one) a per-component
/// posterior matrix with one row per real component.
#[derive(Clone, Debug)]
pub struct DetectorOutput {
    pub hard: Array1<f64>,
    pub posteriors: Option<Array2<f64>>,
    pub metadata: DetectorMetadata,
}

impl DetectorOutput {
    fn hard_only(hard: Array1<f64>) -> Self {
        DetectorOutput {
            hard,
            posteriors: None,
            metadata: DetectorMetadata::default(),
        }
    }
}

/// Least-squares inversion followed by symbol rounding.
pub fn zf_detect(h: &Array2<f64>, y: &Array1<f64>, c: &Constellation) -> Result<DetectorOutput> {
    let (q, r) = qr_thin(h)?;
    let diag: Vec<f64> = (0..r.nrows()).map(|i| r[[i, i]].abs()).collect();
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let dmax = diag.iter().cloned().fold(0.0f64, f64::max);
    if dmin < 1e-6 * dmax {
        return Err(Error::Numerical(
            "zf_detect: channel too ill conditioned".into(),
        ));
    }
    let x_ls = solve_upper(&r, &q.t().dot(y))?;
    Ok(DetectorOutput::hard_only(hard_round(&x_ls.view(), c)))
}

fn check_enumeration_size(dx: usize, c: &Constellation) -> Result<u64> {
    let total = (c.onehot_dim as f64).powi(dx as i32);
    if total > MAX_ENUMERATION {
        return Err(Error::TooLarge(format!(
            "{}^{dx} candidates exceed the 2^24 enumeration guard",
            c.onehot_dim
        )));
    }
    Ok(total as u64)
}

/// Calls `f` with every symbol vector, in lexicographic order (last
/// component varies fastest).
fn for_each_candidate(
    dx: usize,
    c: &Constellation,
    mut f: impl FnMut(&[usize], &Array1<f64>),
) {
    let s = c.onehot_dim;
    let mut idx = vec![0usize; dx];
    let mut x = Array1::<f64>::from_elem(dx, c.real_alphabet[0]);
    loop {
        f(&idx, &x);
        let mut p = dx;
        loop {
            if p == 0 {
                return;
            }
            p -= 1;
            idx[p] += 1;
            if idx[p] < s {
                x[p] = c.real_alphabet[idx[p]];
                break;
            }
            idx[p] = 0;
            x[p] = c.real_alphabet[0];
        }
    }
}

fn residual_metric(h: &Array2<f64>, y: &Array1<f64>, x: &Array1<f64>) -> f64 {
    let r = y - &h.dot(x);
    r.dot(&r)
}

/// Exhaustive maximum-likelihood search; ties break toward the
/// lexicographically smaller symbol vector.
pub fn ml_detect_exhaustive(
    h: &Array2<f64>,
    y: &Array1<f64>,
    c: &Constellation,
) -> Result<DetectorOutput> {
    let dx = h.ncols();
    let total = check_enumeration_size(dx, c)?;
    let mut best = f64::INFINITY;
    let mut best_x = Array1::<f64>::zeros(dx);
    for_each_candidate(dx, c, |_, x| {
        let m = residual_metric(h, y, x);
        if m < best {
            best = m;
            best_x.assign(x);
        }
    });
    let mut out = DetectorOutput::hard_only(best_x);
    out.metadata.nodes_visited = Some(total);
    Ok(out)
}

/// Exact per-component Bayes posteriors by full enumeration with
/// log-sum-exp stabilization; hard output is the per-row argmax.
pub fn exact_posteriors(
    h: &Array2<f64>,
    y: &Array1<f64>,
    sigma2: f64,
    c: &Constellation,
) -> Result<DetectorOutput> {
    if sigma2 <= 0.0 {
        return Err(Error::Domain(format!(
            "exact_posteriors needs sigma2 > 0, got {sigma2}"
        )));
    }
    let dx = h.ncols();
    check_enumeration_size(dx, c)?;
    let s = c.onehot_dim;

    let mut max_e = f64::NEG_INFINITY;
    for_each_candidate(dx, c, |_, x| {
        let e = -residual_metric(h, y, x) / (2.0 * sigma2);
        if e > max_e {
            max_e = e;
        }
    });

    let mut rows = Array2::<f64>::zeros((dx, s));
    let mut total = 0.0;
    for_each_candidate(dx, c, |idx, x| {
        let w = (-residual_metric(h, y, x) / (2.0 * sigma2) - max_e).exp();
        total += w;
        for (j, &i) in idx.iter().enumerate() {
            rows[[j, i]] += w;
        }
    });
    rows.mapv_inplace(|v| v / total);

    let mut hard = Array1::<f64>::zeros(dx);
    for j in 0..dx {
        let mut arg = 0;
        for i in 1..s {
            if rows[[j, i]] > rows[[j, arg]] {
                arg = i;
            }
        }
        hard[j] = c.real_alphabet[arg];
    }
    Ok(DetectorOutput {
        hard,
        posteriors: Some(rows),
        metadata: DetectorMetadata::default(),
    })
}

/// Posterior mean and variance of X given X + sqrt(tau2) Z = r, with X
/// uniform on the real alphabet and Z standard normal.
pub fn posterior_mean_denoiser(r: f64, tau2: f64, c: &Constellation) -> (f64, f64) {
    let mut max_e = f64::NEG_INFINITY;
    for &s in &c.real_alphabet {
        let e = -(r - s) * (r - s) / (2.0 * tau2);
        if e > max_e {
            max_e = e;
        }
    }
    let mut wsum = 0.0;
    let mut mean = 0.0;
    let mut second = 0.0;
    for &s in &c.real_alphabet {
        let w = (-(r - s) * (r - s) / (2.0 * tau2) - max_e).exp();
        wsum += w;
        mean += w * s;
        second += w * s * s;
    }
    mean /= wsum;
    second /= wsum;
    (mean, (second - mean * mean).max(0.0))
}

/// Per-symbol posterior weights of the scalar denoiser, normalized to 1.
pub(crate) fn denoiser_weights(r: f64, tau2: f64, c: &Constellation, out: &mut [f64]) {
    let mut max_e = f64::NEG_INFINITY;
    for &s in &c.real_alphabet {
        let e = -(r - s) * (r - s) / (2.0 * tau2);
        if e > max_e {
            max_e = e;
        }
    }
    let mut wsum = 0.0;
    for (o, &s) in out.iter_mut().zip(c.real_alphabet.iter()) {
        let w = (-(r - s) * (r - s) / (2.0 * tau2) - max_e).exp();
        *o = w;
        wsum += w;
    }
    for o in out.iter_mut() {
        *o /= wsum;
    }
}
